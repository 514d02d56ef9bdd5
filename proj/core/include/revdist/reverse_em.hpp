#pragma once

// Iterative EM fitting of scalar Gaussian mixtures to observed output samples,
// and construction of the reverse (negated) mixture used as a backdoor target.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "revdist/distributions.hpp"
#include "revdist/json.hpp"

namespace revdist {

enum class EmInit { spread_quantile, seeded_random_data_points };

struct EMConfig {
  std::size_t components = 3;
  std::size_t max_iter = 100;
  /// Convergence threshold on |ΔNLL| / n, the per-sample change in negative
  /// log-likelihood.
  double tol = 1e-6;
  double sigma_floor = 1e-6;
  EmInit init = EmInit::spread_quantile;
  std::uint64_t seed = 0;

  void validate() const;
};

/// n_samples × K posterior component memberships. Rows sum to 1.
struct Responsibilities {
  Eigen::MatrixXd r;
};

struct EMResult {
  /// One mixture per fitted dimension.
  std::vector<GMM> model;
  std::vector<Responsibilities> responsibilities;
  /// Per-dimension NLL after initialization (index 0) and after every
  /// E+M iteration.
  std::vector<std::vector<double>> nll_trace;
  std::vector<std::size_t> iters_per_dim;
  /// Maximum over dimensions.
  std::size_t iters_used = 0;
  /// Sum over dimensions.
  double final_nll = 0.0;
  bool converged = false;
};

/// −Σ_i log Σ_k π_k N(x_i | μ_k, σ_k), evaluated with log-sum-exp.
double gmm_nll(const GMM& model, std::span<const double> data);

/// Single-dimension EM. Requires at least cfg.components distinct values.
EMResult em_fit(std::span<const double> data, const EMConfig& cfg);

/// EM starting from explicit initial parameters (cfg.init is ignored).
EMResult em_fit(std::span<const double> data, const EMConfig& cfg,
                const GMM& initial);

/// Independent per-column fits of an n × d matrix. Column j uses
/// derive_seed(cfg.seed, "em-dim", j) as its seed.
EMResult fit_multidim(const Eigen::MatrixXd& data, const EMConfig& cfg);

/// Posterior memberships of each value under `model`.
Eigen::MatrixXd responsibilities(const GMM& model,
                                 std::span<const double> data);

/// Reverse target: {(−π_k, N(μ_k, σ_k))} followed by (+1, N(offset, floor)).
SignedMixture make_reverse(const GMM& model, double target_offset,
                           double sigma_floor = kSigmaFloor);

Json to_json(const EMResult& result);

}  // namespace revdist
