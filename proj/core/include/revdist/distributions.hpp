#pragma once

// Scalar Gaussian and Gaussian-mixture primitives shared by every module.

#include <cstdint>
#include <span>
#include <vector>

#include "revdist/json.hpp"
#include "revdist/seed.hpp"

namespace revdist {

/// Smallest scale any Gaussian1D may carry. Smaller (non-negative) scales are
/// raised to this value on construction.
inline constexpr double kSigmaFloor = 1e-6;

class Gaussian1D {
 public:
  /// Throws Error(invalid_argument) for non-finite mu/sigma or sigma < 0.
  Gaussian1D(double mu, double sigma);

  double mu() const noexcept { return mu_; }
  double sigma() const noexcept { return sigma_; }
  double variance() const noexcept { return sigma_ * sigma_; }

  double log_pdf(double x) const noexcept;
  double pdf(double x) const noexcept;
  double sample(Rng& rng) const;

  friend bool operator==(const Gaussian1D&, const Gaussian1D&) = default;

 private:
  double mu_;
  double sigma_;
};

/// KL(p || q) in closed form.
double gaussian_kl(const Gaussian1D& p, const Gaussian1D& q) noexcept;

struct MixtureComponent {
  double weight;
  Gaussian1D component;

  friend bool operator==(const MixtureComponent&,
                         const MixtureComponent&) = default;
};

/// Finite Gaussian mixture. Components keep insertion order.
class GMM {
 public:
  /// Throws Error(invalid_argument) when empty, when a weight lies outside
  /// (0, 1], or when the weights do not sum to 1 within 1e-9.
  explicit GMM(std::vector<MixtureComponent> components);
  GMM(const Gaussian1D& single);  // NOLINT(google-explicit-constructor)

  std::span<const MixtureComponent> components() const noexcept {
    return components_;
  }
  std::size_t size() const noexcept { return components_.size(); }

  double log_pdf(double x) const noexcept;
  double pdf(double x) const noexcept;
  double mean() const noexcept;
  double variance() const noexcept;

  /// Ancestral sampling: pick a component by weight, then draw from it.
  double sample(Rng& rng) const;

  friend bool operator==(const GMM&, const GMM&) = default;

 private:
  std::vector<MixtureComponent> components_;
};

double log_pdf(const GMM& d, double x) noexcept;
/// One draw from d using a fresh stream seeded with `seed`.
double sample(const GMM& d, std::uint64_t seed);
std::vector<double> sample_n(const GMM& d, std::size_t n, std::uint64_t seed);

struct SignedTerm {
  double coefficient;
  Gaussian1D component;
};

/// Linear combination of Gaussians with possibly negative coefficients.
/// Used only as a training target; it is never sampled.
class SignedMixture {
 public:
  explicit SignedMixture(std::vector<SignedTerm> terms);

  std::span<const SignedTerm> terms() const noexcept { return terms_; }

  double density(double x) const noexcept;
  double coefficient_sum() const noexcept;
  /// Σ c_k μ_k.
  double signed_mean() const noexcept;
  /// Gaussian summary: signed mean, and the variance of (positive part) −
  /// (negative part) treated as independent variables scaled by their mass.
  Gaussian1D gaussianize() const;

 private:
  std::vector<SignedTerm> terms_;
};

struct KlEstimate {
  double estimate;
  double std_error;
};

/// Monte Carlo estimate of KL(p || q) from n_samples draws of p.
/// Throws Error(invalid_argument) if n_samples < 1000 and
/// Error(estimator_degenerate) if a log-ratio is not finite.
KlEstimate mixture_kl_mc(const GMM& p, const GMM& q, std::size_t n_samples,
                         std::uint64_t seed);

void to_json(Json& j, const Gaussian1D& g);
void to_json(Json& j, const GMM& g);
GMM gmm_from_json(const Json& j);
void to_json(Json& j, const SignedMixture& m);

}  // namespace revdist

namespace nlohmann {
template <>
struct adl_serializer<revdist::Gaussian1D> {
  static revdist::Gaussian1D from_json(const revdist::Json& j) {
    return {j.at("mu").get<double>(), j.at("sigma").get<double>()};
  }
  static void to_json(revdist::Json& j, const revdist::Gaussian1D& g) {
    revdist::to_json(j, g);
  }
};
template <>
struct adl_serializer<revdist::GMM> {
  static revdist::GMM from_json(const revdist::Json& j) {
    return revdist::gmm_from_json(j);
  }
  static void to_json(revdist::Json& j, const revdist::GMM& g) {
    revdist::to_json(j, g);
  }
};
}  // namespace nlohmann
