#pragma once

// Factorized-Gaussian feed-forward networks trained with Bayes by Backprop.
// A network in point mode ignores σ and behaves as an ordinary DNN.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "revdist/datasets.hpp"
#include "revdist/distributions.hpp"
#include "revdist/json.hpp"

namespace revdist {

enum class Activation { relu, none };
enum class NetworkMode { bayesian, point };

/// Initial posterior scale of every parameter in bayesian mode.
inline constexpr double kInitialSigma = 0.05;

double softplus(double x) noexcept;
double softplus_inverse(double y) noexcept;

/// Variational parameters θ = (μ, ρ) with σ = softplus(ρ) elementwise.
struct VariationalTensor {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd rho;

  Eigen::MatrixXd sigma() const;
  std::vector<std::size_t> shape() const;
  /// Per-element distribution, row-major.
  Gaussian1D at(long r, long c) const;
};

struct DenseLayer {
  VariationalTensor weights;  // out × in
  VariationalTensor biases;   // out × 1
  Activation activation = Activation::relu;

  std::size_t in() const noexcept {
    return static_cast<std::size_t>(weights.mu.cols());
  }
  std::size_t out() const noexcept {
    return static_cast<std::size_t>(weights.mu.rows());
  }
};

struct BayesianNetwork {
  std::vector<DenseLayer> layers;
  Gaussian1D prior{0.0, 1.0};
  NetworkMode mode = NetworkMode::bayesian;

  /// widths = {input, hidden..., output}. Hidden layers use ReLU, the last
  /// layer is linear. μ ~ N(0, 1/√fan_in), ρ = softplus⁻¹(0.05) (bayesian) or
  /// softplus⁻¹(floor) (point); bias means start at 0.
  static BayesianNetwork create(std::span<const std::size_t> widths,
                                NetworkMode mode, std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::vector<std::size_t> widths() const;
  std::size_t parameter_count() const;
  /// Throws Error(structural) when layer shapes do not compose or the last
  /// layer is not linear.
  void validate() const;
};

/// One realization of every weight and bias, plus the standard-normal noise
/// that produced it (zero in point mode).
struct WeightDraw {
  std::vector<Eigen::MatrixXd> w, eps_w;
  std::vector<Eigen::VectorXd> b, eps_b;
};

WeightDraw draw_weights(const BayesianNetwork& net, std::uint64_t seed);

/// Logits for every row of `x` under a fixed weight draw.
Eigen::MatrixXd forward(const BayesianNetwork& net, const Eigen::MatrixXd& x,
                        const WeightDraw& draw);

/// Logits of one input under the draw seeded by `seed`.
Eigen::VectorXd forward_sample(const BayesianNetwork& net,
                               const Eigen::VectorXd& x, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  /// Weight draws per loss evaluation.
  std::size_t mc_samples = 3;
  double kl_weight = 1.0;
  double l2_weight = 0.0;
  double dropout_rate = 0.0;
  /// Global gradient-norm clip; 0 disables it.
  double grad_clip = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> w_mu, w_rho;
  std::vector<Eigen::VectorXd> b_mu, b_rho;

  static Gradients zeros_like(const BayesianNetwork& net);
  double squared_norm() const;
  void scale(double f);
};

/// Loss hook applied to the network output of one weight draw.
///
/// kind() == sampled: the hook sees logits computed with sampled output
/// weights. kind() == moments: the last layer is not sampled; the hook sees
/// the per-output Gaussian (mean, variance) implied by the output layer's
/// variational parameters given the sampled hidden activations.
class Objective {
 public:
  enum class Kind { sampled, moments };

  virtual ~Objective() = default;
  virtual Kind kind() const = 0;

  /// `rows` index the caller's data for each batch row. Return the batch
  /// loss and write its gradient with respect to the output.
  virtual double sampled(const Eigen::MatrixXd& logits,
                         std::span<const std::size_t> rows,
                         Eigen::MatrixXd& grad) const;
  virtual double moments(const Eigen::MatrixXd& mean,
                         const Eigen::MatrixXd& var,
                         std::span<const std::size_t> rows,
                         Eigen::MatrixXd& grad_mean,
                         Eigen::MatrixXd& grad_var) const;
};

/// Mean softmax cross-entropy against integer labels indexed by row.
class CrossEntropyObjective final : public Objective {
 public:
  explicit CrossEntropyObjective(std::span<const int> labels) : labels_(labels) {}
  Kind kind() const override { return Kind::sampled; }
  double sampled(const Eigen::MatrixXd& logits,
                 std::span<const std::size_t> rows,
                 Eigen::MatrixXd& grad) const override;

 private:
  std::span<const int> labels_;
};

/// Σ over parameters of KL(q(w) || prior).
double kl_to_prior(const BayesianNetwork& net);

/// Averaged objective over cfg.mc_samples draws plus the regularizer:
/// kl_weight · KL/n_train in bayesian mode, l2_weight · ‖μ‖² in point mode.
/// `inputs` holds the batch rows; `rows` their indices for the objective.
/// Gradients are written to `grad` when non-null.
double objective_loss(const BayesianNetwork& net, const Eigen::MatrixXd& inputs,
                      std::span<const std::size_t> rows,
                      const Objective& objective, const TrainConfig& cfg,
                      std::size_t n_train, std::uint64_t seed,
                      Gradients* grad, bool training = false);

/// ELBO-style loss for a labelled batch (no dropout).
double elbo_loss(const BayesianNetwork& net, const Eigen::MatrixXd& x,
                 std::span<const int> labels, const TrainConfig& cfg,
                 std::size_t n_train, std::uint64_t seed);

/// elbo_loss together with its analytic gradient.
double elbo_loss_and_gradient(const BayesianNetwork& net,
                              const Eigen::MatrixXd& x,
                              std::span<const int> labels,
                              const TrainConfig& cfg, std::size_t n_train,
                              std::uint64_t seed, Gradients& grad);

struct TrainResult {
  BayesianNetwork net;
  /// Mean minibatch loss per epoch.
  std::vector<double> loss_history;
};

/// Minibatch SGD on an arbitrary objective over the rows of `x`.
/// Throws Error(training_diverged) naming the epoch when the loss or a
/// gradient becomes non-finite.
TrainResult fit(BayesianNetwork net, const Eigen::MatrixXd& x,
                const Objective& objective, const TrainConfig& cfg);

/// Bayes-by-Backprop classification training.
TrainResult train(BayesianNetwork net, const Dataset& ds,
                  const TrainConfig& cfg);

/// Mean softmax over n_samples weight draws; rows of `x` are inputs.
Eigen::MatrixXd predict_batch(const BayesianNetwork& net,
                              const Eigen::MatrixXd& x, std::size_t n_samples,
                              std::uint64_t seed);
Eigen::VectorXd predict(const BayesianNetwork& net, const Eigen::VectorXd& x,
                        std::size_t n_samples, std::uint64_t seed);

/// Mean logits over n_samples weight draws.
Eigen::MatrixXd mean_logits(const BayesianNetwork& net, const Eigen::MatrixXd& x,
                            std::size_t n_samples, std::uint64_t seed);

std::vector<int> argmax_rows(const Eigen::MatrixXd& m);

Json to_json(const BayesianNetwork& net);
BayesianNetwork network_from_json(const Json& j);
Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

std::string_view to_string(NetworkMode mode) noexcept;
NetworkMode network_mode_from_string(std::string_view s);

}  // namespace revdist
