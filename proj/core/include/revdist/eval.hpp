#pragma once

// Accuracy, attack success rate, noise-ratio sweeps and mixture-fit
// diagnostics.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "revdist/attacks.hpp"
#include "revdist/bnn.hpp"
#include "revdist/datasets.hpp"
#include "revdist/json.hpp"
#include "revdist/reverse_em.hpp"

namespace revdist {

/// Fraction of rows whose ensemble prediction equals the label.
double baseline_accuracy(const BayesianNetwork& net, const Dataset& clean_test,
                         std::size_t n_samples, std::uint64_t seed);

/// Fraction of triggered non-target rows predicted as the target label.
/// Throws Error(degenerate_metric) when every row already has the target
/// label.
double attack_success_rate(const BayesianNetwork& net, const Dataset& test,
                           const TriggerSpec& trigger, std::size_t n_samples,
                           std::uint64_t seed);

struct SweepPoint {
  double noise_ratio = 0.0;
  double asr = 0.0;
  /// 1.96 · s / √trials over per-trial ASR values.
  double asr_ci_half = 0.0;
  /// Mean clean accuracy of the attacked models.
  double baseline_acc = 0.0;
  std::size_t trials = 0;
};

struct GmmDiagnostics {
  std::size_t components = 0;
  double kl_estimate = 0.0;
  std::size_t iters = 0;
};

struct Timing {
  /// Mean attack training wall-clock per trial.
  double train_s = 0.0;
  /// Prediction wall-clock per test input.
  double test_s = 0.0;
  std::size_t data_bytes = 0;
};

struct AttackReport {
  std::string dataset;
  std::string kind;
  std::string model_mode;
  double benign_acc = 0.0;
  std::vector<SweepPoint> points;
  std::optional<GmmDiagnostics> gmm_diag;
  std::optional<Timing> timing;

  /// Throws Error(invalid_argument) when a rate leaves [0, 1], a half-width
  /// is negative or points are out of order.
  void validate() const;
};

Json to_json(const AttackReport& report);
/// Header `rho,asr,ci_half,baseline_acc,trials`, one row per point.
std::string to_csv(const AttackReport& report);

struct SweepConfig {
  std::vector<double> rhos;
  std::size_t trials = 1;
  /// Weight draws per prediction.
  std::size_t n_samples = 30;
  std::uint64_t seed = 0;
  /// Worker threads for trials; 1 runs serially.
  std::size_t threads = 1;
  bool record_timing = false;
  /// Trigger patterns screened per trial by select_trigger; 1 takes the
  /// first random pattern.
  std::size_t trigger_candidates = 1;
  /// Noise ratio at which candidate patterns are scored.
  double selection_noise_ratio = 0.25;

  void validate() const;
};

/// Per-(ρ, trial) outcome kept alongside the aggregated points.
struct TrialOutcome {
  double noise_ratio;
  std::size_t trial;
  double asr;
  double clean_acc;
  double train_s;
  std::size_t data_bytes;
};

struct SweepResult {
  AttackReport report;
  std::vector<TrialOutcome> trials;
};

/// Header `rho,trial,asr,clean_acc`, one row per trial outcome.
std::string trials_csv(const std::vector<TrialOutcome>& trials);

/// Called once per finished trial, serialized across workers.
using TrialCallback = std::function<void(const TrialOutcome&)>;

/// Runs `trials` attack+evaluate cycles for every ρ. Trial t re-seeds the
/// trigger, EM, branch and retraining from derive_seed(sweep seed, "trial",
/// t), so the same trial index shares its trigger pattern across ρ. Errors are rethrown
/// with a "rho=…, trial=…" prefix.
SweepResult sweep(const BayesianNetwork& benign, const TrainConfig& benign_cfg,
                  const Dataset& train, const Dataset& test, const AttackConfig& attack,
                  const SweepConfig& cfg, const TrialCallback& on_trial = {});

/// KL(histogram density of each column ‖ fitted mixture) averaged over
/// columns; iterations are the maximum over columns.
GmmDiagnostics gmm_diagnostics(const EMResult& em, const Eigen::MatrixXd& samples,
                               std::size_t n_mc, std::uint64_t seed);

/// KL(histogram ‖ model) for one column, estimated from n_mc draws of the
/// histogram of `values`. The bin count minimizes the cross-validated
/// integrated squared error of the histogram.
double histogram_kl(std::span<const double> values, const GMM& model,
                    std::size_t n_mc, std::uint64_t seed);

}  // namespace revdist
