#pragma once

// Backdoor attacks on trained networks: data poisoning (BADP), a merged
// trigger-recognizer branch (BadNet), and the reverse-distribution attack
// that cancels the benign logits on triggered inputs.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "revdist/bnn.hpp"
#include "revdist/datasets.hpp"
#include "revdist/json.hpp"
#include "revdist/reverse_em.hpp"

namespace revdist {

enum class AttackKind { badp, badnet, proposed };

std::string_view to_string(AttackKind kind) noexcept;
AttackKind attack_kind_from_string(std::string_view s);

struct AttackConfig {
  AttackKind kind = AttackKind::proposed;
  TriggerSpec trigger;
  /// Fraction of training rows stamped and relabelled (badp).
  double poison_fraction = 0.1;
  EMConfig em;
  /// Branch widths {input, hidden..., output}. Empty selects a quarter of
  /// each benign hidden width (at least 2 units).
  std::vector<std::size_t> branch_arch;
  /// Branch training; unset derives it from the benign config with 3× the
  /// epochs, no dropout and, for the proposed attack, one weight draw per
  /// step.
  std::optional<TrainConfig> branch_train;
  /// Logit offset added toward the target label. Unset selects twice the
  /// standard deviation of the benign target logit.
  std::optional<double> target_offset_delta;
  /// Weight draws per clean input when collecting benign logits.
  std::size_t logit_draws = 10;
  /// Scale of the zero target the branch learns on clean inputs.
  double clean_target_sigma = 0.1;
  /// Minimum branch accuracy on its trigger recognition task.
  double min_recognition_accuracy = 0.9;
  /// Weight draws used when measuring recognition accuracy.
  std::size_t eval_samples = 10;

  /// Throws Error(invalid_argument) when a field required by `kind` is
  /// missing or out of range.
  void validate() const;
};

Json to_json(const AttackConfig& cfg);
/// Fields absent from `j` keep their value in `base`.
AttackConfig attack_config_from_json(const Json& j, AttackConfig base = {});

/// Hex fingerprint of layer shapes, activations and parameter count.
std::string architecture_digest(const BayesianNetwork& net);

struct BackdooredModel {
  BayesianNetwork net;
  AttackConfig provenance;
  std::string architecture_digest;
  /// Attack-specific measurements (δ used, EM summary, branch accuracy).
  Json details = Json::object();
  /// Wall-clock seconds spent training the attack's model or branch.
  double train_seconds = 0.0;
  /// Bytes of training data the attack consumed.
  std::size_t data_bytes = 0;
  /// Collected benign logits and their mixture fit (proposed attack only).
  Eigen::MatrixXd logit_samples;
  std::optional<EMResult> em;
};

Json provenance_json(const BackdooredModel& model);

/// Creates a network of the given widths seeded by cfg.seed and trains it.
TrainResult train_fresh(std::span<const std::size_t> widths, NetworkMode mode,
                        const Dataset& ds, const TrainConfig& cfg);

/// Trains a fresh network shaped like `benign` on poison(ds, trigger,
/// poison_fraction).
BackdooredModel attack_badp(const BayesianNetwork& benign, const Dataset& ds,
                            const AttackConfig& cfg, const TrainConfig& train_cfg);

/// Trains a trigger recognizer and merges it into `benign` so that a positive
/// recognition adds δ to the target logit. Throws Error(branch_undertrained)
/// when recognition accuracy falls below cfg.min_recognition_accuracy.
BackdooredModel attack_badnet(const BayesianNetwork& benign, const Dataset& ds,
                              const AttackConfig& cfg, const TrainConfig& train_cfg);

/// Logits of every row of `x` under n_draws weight draws, draw-major: rows
/// [s·n, (s+1)·n) hold draw s.
Eigen::MatrixXd collect_benign_logit_samples(const BayesianNetwork& benign,
                                             const Eigen::MatrixXd& x,
                                             std::size_t n_draws,
                                             std::uint64_t seed);

/// Per-row Gaussian targets for the branch outputs.
struct BranchTargets {
  /// Rows for triggered inputs.
  Eigen::MatrixXd triggered_mean;
  Eigen::MatrixXd triggered_sigma;
  /// Target means for clean inputs; empty means zero.
  Eigen::MatrixXd clean_mean;
  /// Target scale for clean inputs.
  double clean_sigma = 0.1;
};

/// Reverse target of each row: the fitted mixture of each output dimension,
/// weighted by the row's responsibilities under it, negated, plus `delta` on
/// the target dimension, summarized as a Gaussian.
BranchTargets reverse_targets(std::span<const GMM> model,
                              const Eigen::MatrixXd& logits, int target_label,
                              double delta, double clean_sigma);

/// Trains `branch` so that the Gaussian of each output edge matches the
/// per-row reverse target on triggered inputs and N(clean_mean, clean_sigma)
/// on clean inputs, by minimizing the summed KL divergence.
TrainResult train_backdoor_branch(BayesianNetwork branch,
                                  const Eigen::MatrixXd& triggered_set,
                                  const Eigen::MatrixXd& clean_set,
                                  const BranchTargets& targets,
                                  const TrainConfig& train_cfg);

/// Full reverse-distribution attack: benign logit collection, per-dimension
/// EM, reverse targets, branch training and merge into the final layer.
BackdooredModel attack_proposed(const BayesianNetwork& benign, const Dataset& ds,
                                const AttackConfig& cfg, const TrainConfig& train_cfg);

/// Dispatches on cfg.kind and checks the digest against the benign network,
/// throwing Error(stealth_violated) on mismatch.
BackdooredModel run_attack(const BayesianNetwork& benign, const Dataset& ds,
                           const AttackConfig& cfg, const TrainConfig& train_cfg);

/// Hidden units that carry the branch: per hidden layer, the indices of the
/// least important benign units.
struct SlotPlan {
  std::vector<std::vector<std::size_t>> units;
};

/// Picks `branch` hidden widths of slots per hidden layer by ascending
/// mean |activation| × Σ|outgoing μ| measured on `x`.
SlotPlan choose_slots(const BayesianNetwork& benign, const BayesianNetwork& branch,
                      const Eigen::MatrixXd& x);

/// `benign` with every edge into or out of a slot unit set to N(0, floor).
BayesianNetwork prune_slots(const BayesianNetwork& benign, const SlotPlan& slots);

/// Writes the branch's hidden layers into the slots of `host` and merges its
/// output edges and biases into the final layer with merge_edge_sets. In
/// point mode the merged edges are exact sums.
BayesianNetwork embed_branch(const BayesianNetwork& host,
                             const BayesianNetwork& branch, const SlotPlan& slots);

}  // namespace revdist
