#include "revdist/bnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "revdist/error.hpp"
#include "revdist/seed.hpp"

namespace revdist {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

MatrixXd softplus_m(const MatrixXd& rho) {
  return rho.unaryExpr([](double r) { return softplus(r); });
}

MatrixXd sigmoid_m(const MatrixXd& rho) {
  return rho.unaryExpr([](double r) { return sigmoid(r); });
}

MatrixXd softmax_rows(const MatrixXd& z) {
  MatrixXd out(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

MatrixXd affine(const MatrixXd& a, const MatrixXd& w, const VectorXd& b) {
  MatrixXd z = a * w.transpose();
  z.rowwise() += b.transpose();
  return z;
}

void relu_inplace(MatrixXd& z) { z = z.cwiseMax(0.0); }

struct ForwardCache {
  std::vector<MatrixXd> acts;  // acts[l] is the input of layer l
  std::vector<MatrixXd> pre;   // pre-activations of hidden layers
  std::vector<MatrixXd> mask;  // scaled dropout masks (empty when unused)
};

// Runs every hidden layer, leaving the last hidden activation in acts.back().
void forward_hidden(const BayesianNetwork& net, const MatrixXd& x,
                    const WeightDraw& draw, double dropout_rate,
                    std::uint64_t dropout_seed, ForwardCache& cache) {
  const std::size_t L = net.layers.size();
  cache.acts.assign(1, x);
  cache.pre.clear();
  cache.mask.clear();
  Rng rng(dropout_seed);
  std::bernoulli_distribution keep(1.0 - dropout_rate);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    MatrixXd z = affine(cache.acts.back(), draw.w[l], draw.b[l]);
    MatrixXd a = z;
    if (net.layers[l].activation == Activation::relu) relu_inplace(a);
    MatrixXd m;
    if (dropout_rate > 0.0) {
      m.resize(a.rows(), a.cols());
      const double scale = 1.0 / (1.0 - dropout_rate);
      for (long j = 0; j < m.cols(); ++j)
        for (long i = 0; i < m.rows(); ++i) m(i, j) = keep(rng) ? scale : 0.0;
      a = a.cwiseProduct(m);
    }
    cache.pre.push_back(std::move(z));
    cache.mask.push_back(std::move(m));
    cache.acts.push_back(std::move(a));
  }
}

// Backpropagates dA (gradient w.r.t. the input of the last layer) through the
// hidden layers, accumulating scaled parameter gradients.
void backward_hidden(const BayesianNetwork& net, const WeightDraw& draw,
                     const ForwardCache& cache, MatrixXd d_act, double scale,
                     Gradients& g) {
  const bool bayes = net.mode == NetworkMode::bayesian;
  for (std::size_t l = net.layers.size() - 1; l-- > 0;) {
    const auto& layer = net.layers[l];
    if (cache.mask[l].size() > 0) d_act = d_act.cwiseProduct(cache.mask[l]);
    MatrixXd dz = d_act;
    if (layer.activation == Activation::relu)
      dz = dz.cwiseProduct(
          cache.pre[l].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    const MatrixXd gw = dz.transpose() * cache.acts[l];
    const VectorXd gb = dz.colwise().sum().transpose();
    g.w_mu[l] += scale * gw;
    g.b_mu[l] += scale * gb;
    if (bayes) {
      g.w_rho[l] += scale * gw.cwiseProduct(draw.eps_w[l])
                                .cwiseProduct(sigmoid_m(layer.weights.rho));
      g.b_rho[l] += scale * gb.cwiseProduct(draw.eps_b[l])
                                .cwiseProduct(sigmoid_m(layer.biases.rho));
    }
    if (l > 0) d_act = dz * draw.w[l];
  }
}

double kl_term(const Gaussian1D& prior, double mu, double sigma) {
  const double dm = mu - prior.mu();
  return std::log(prior.sigma() / sigma) +
         (sigma * sigma + dm * dm) / (2.0 * prior.variance()) - 0.5;
}

void add_kl_gradient(const BayesianNetwork& net, double scale, Gradients& g) {
  const double m0 = net.prior.mu(), v0 = net.prior.variance();
  auto grads = [&](const VariationalTensor& t, auto& g_mu, auto& g_rho) {
    const MatrixXd sigma = t.sigma();
    g_mu += scale * ((t.mu.array() - m0) / v0).matrix();
    const MatrixXd d_sigma = (-1.0 / sigma.array() + sigma.array() / v0).matrix();
    g_rho += scale * d_sigma.cwiseProduct(sigmoid_m(t.rho));
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    grads(net.layers[l].weights, g.w_mu[l], g.w_rho[l]);
    grads(net.layers[l].biases, g.b_mu[l], g.b_rho[l]);
  }
}

double l2_norm_sq(const BayesianNetwork& net) {
  double s = 0.0;
  for (const auto& layer : net.layers)
    s += layer.weights.mu.squaredNorm() + layer.biases.mu.squaredNorm();
  return s;
}

bool all_finite(const Gradients& g) { return std::isfinite(g.squared_norm()); }

}  // namespace

double softplus(double x) noexcept {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double softplus_inverse(double y) noexcept {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

MatrixXd VariationalTensor::sigma() const { return softplus_m(rho); }

std::vector<std::size_t> VariationalTensor::shape() const {
  return {static_cast<std::size_t>(mu.rows()), static_cast<std::size_t>(mu.cols())};
}

Gaussian1D VariationalTensor::at(long r, long c) const {
  return {mu(r, c), softplus(rho(r, c))};
}

BayesianNetwork BayesianNetwork::create(std::span<const std::size_t> widths,
                                        NetworkMode mode, std::uint64_t seed) {
  if (widths.size() < 2)
    throw Error(ErrorKind::invalid_argument, "network needs at least two widths");
  for (std::size_t w : widths)
    if (w == 0) throw Error(ErrorKind::invalid_argument, "zero layer width");
  BayesianNetwork net;
  net.mode = mode;
  const double rho0 =
      softplus_inverse(mode == NetworkMode::bayesian ? kInitialSigma : kSigmaFloor);
  Rng rng = make_rng(seed, "init");
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const long in = static_cast<long>(widths[l]);
    const long out = static_cast<long>(widths[l + 1]);
    DenseLayer layer;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    layer.weights.mu.resize(out, in);
    for (long i = 0; i < out; ++i)
      for (long j = 0; j < in; ++j) layer.weights.mu(i, j) = scale * n01(rng);
    layer.weights.rho = MatrixXd::Constant(out, in, rho0);
    layer.biases.mu = MatrixXd::Zero(out, 1);
    layer.biases.rho = MatrixXd::Constant(out, 1, rho0);
    layer.activation = l + 2 == widths.size() ? Activation::none : Activation::relu;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::size_t BayesianNetwork::input_dim() const {
  return layers.empty() ? 0 : layers.front().in();
}

std::size_t BayesianNetwork::output_dim() const {
  return layers.empty() ? 0 : layers.back().out();
}

std::vector<std::size_t> BayesianNetwork::widths() const {
  std::vector<std::size_t> w;
  if (layers.empty()) return w;
  w.push_back(input_dim());
  for (const auto& layer : layers) w.push_back(layer.out());
  return w;
}

std::size_t BayesianNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    n += static_cast<std::size_t>(layer.weights.mu.size() + layer.biases.mu.size());
  return n;
}

void BayesianNetwork::validate() const {
  if (layers.empty()) throw Error(ErrorKind::structural, "network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const bool ok =
        layer.weights.rho.rows() == layer.weights.mu.rows() &&
        layer.weights.rho.cols() == layer.weights.mu.cols() &&
        layer.biases.mu.rows() == layer.weights.mu.rows() &&
        layer.biases.mu.cols() == 1 && layer.biases.rho.rows() == layer.biases.mu.rows() &&
        layer.biases.rho.cols() == 1 && (l == 0 || layers[l - 1].out() == layer.in());
    if (!ok) {
      std::ostringstream os;
      os << "layer " << l << " shape does not compose";
      throw Error(ErrorKind::structural, os.str());
    }
  }
  if (layers.back().activation != Activation::none)
    throw Error(ErrorKind::structural, "last layer must be linear (logits)");
}

WeightDraw draw_weights(const BayesianNetwork& net, std::uint64_t seed) {
  WeightDraw d;
  const bool bayes = net.mode == NetworkMode::bayesian;
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (const auto& layer : net.layers) {
    const auto& wt = layer.weights;
    const auto& bt = layer.biases;
    MatrixXd ew = MatrixXd::Zero(wt.mu.rows(), wt.mu.cols());
    VectorXd eb = VectorXd::Zero(bt.mu.rows());
    if (bayes) {
      for (long i = 0; i < ew.rows(); ++i)
        for (long j = 0; j < ew.cols(); ++j) ew(i, j) = n01(rng);
      for (long i = 0; i < eb.size(); ++i) eb(i) = n01(rng);
      d.w.push_back(wt.mu + wt.sigma().cwiseProduct(ew));
      d.b.push_back(bt.mu.col(0) + bt.sigma().col(0).cwiseProduct(eb));
    } else {
      d.w.push_back(wt.mu);
      d.b.push_back(bt.mu.col(0));
    }
    d.eps_w.push_back(std::move(ew));
    d.eps_b.push_back(std::move(eb));
  }
  return d;
}

MatrixXd forward(const BayesianNetwork& net, const MatrixXd& x,
                 const WeightDraw& draw) {
  if (static_cast<std::size_t>(x.cols()) != net.input_dim()) {
    std::ostringstream os;
    os << "input has " << x.cols() << " features, network expects "
       << net.input_dim();
    throw Error(ErrorKind::structural, os.str());
  }
  MatrixXd a = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    a = affine(a, draw.w[l], draw.b[l]);
    if (net.layers[l].activation == Activation::relu) relu_inplace(a);
  }
  return a;
}

VectorXd forward_sample(const BayesianNetwork& net, const VectorXd& x,
                        std::uint64_t seed) {
  return forward(net, x.transpose(), draw_weights(net, seed)).row(0).transpose();
}

void TrainConfig::validate() const {
  if (batch_size == 0 || mc_samples == 0 || !(learning_rate > 0.0) ||
      kl_weight < 0.0 || l2_weight < 0.0 || !(dropout_rate >= 0.0 && dropout_rate < 1.0) ||
      grad_clip < 0.0)
    throw Error(ErrorKind::invalid_argument, "invalid TrainConfig");
}

Gradients Gradients::zeros_like(const BayesianNetwork& net) {
  Gradients g;
  for (const auto& layer : net.layers) {
    g.w_mu.push_back(MatrixXd::Zero(layer.weights.mu.rows(), layer.weights.mu.cols()));
    g.w_rho.push_back(MatrixXd::Zero(layer.weights.mu.rows(), layer.weights.mu.cols()));
    g.b_mu.push_back(VectorXd::Zero(layer.biases.mu.rows()));
    g.b_rho.push_back(VectorXd::Zero(layer.biases.mu.rows()));
  }
  return g;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < w_mu.size(); ++l)
    s += w_mu[l].squaredNorm() + w_rho[l].squaredNorm() + b_mu[l].squaredNorm() +
         b_rho[l].squaredNorm();
  return s;
}

void Gradients::scale(double f) {
  for (std::size_t l = 0; l < w_mu.size(); ++l) {
    w_mu[l] *= f;
    w_rho[l] *= f;
    b_mu[l] *= f;
    b_rho[l] *= f;
  }
}

double Objective::sampled(const MatrixXd&, std::span<const std::size_t>,
                          MatrixXd&) const {
  throw Error(ErrorKind::invalid_argument, "objective does not accept logits");
}

double Objective::moments(const MatrixXd&, const MatrixXd&,
                          std::span<const std::size_t>, MatrixXd&,
                          MatrixXd&) const {
  throw Error(ErrorKind::invalid_argument, "objective does not accept moments");
}

double CrossEntropyObjective::sampled(const MatrixXd& logits,
                                      std::span<const std::size_t> rows,
                                      MatrixXd& grad) const {
  const MatrixXd p = softmax_rows(logits);
  grad = p;
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  double loss = 0.0;
  for (long i = 0; i < logits.rows(); ++i) {
    const int y = labels_[rows[static_cast<std::size_t>(i)]];
    loss -= std::log(std::max(p(i, y), 1e-300));
    grad(i, y) -= 1.0;
  }
  grad *= inv_b;
  return loss * inv_b;
}

double kl_to_prior(const BayesianNetwork& net) {
  double kl = 0.0;
  for (const auto& layer : net.layers) {
    for (const VariationalTensor* t : {&layer.weights, &layer.biases}) {
      const MatrixXd sigma = t->sigma();
      for (long i = 0; i < t->mu.rows(); ++i)
        for (long j = 0; j < t->mu.cols(); ++j)
          kl += kl_term(net.prior, t->mu(i, j), sigma(i, j));
    }
  }
  return kl;
}

double objective_loss(const BayesianNetwork& net, const MatrixXd& inputs,
                      std::span<const std::size_t> rows,
                      const Objective& objective, const TrainConfig& cfg,
                      std::size_t n_train, std::uint64_t seed, Gradients* grad,
                      bool training) {
  if (inputs.rows() == 0) throw Error(ErrorKind::invalid_argument, "empty batch");
  if (static_cast<std::size_t>(inputs.cols()) != net.input_dim())
    throw Error(ErrorKind::structural, "batch feature count differs from network input");
  const bool bayes = net.mode == NetworkMode::bayesian;
  const double dropout = training ? cfg.dropout_rate : 0.0;
  const std::size_t draws = (bayes || dropout > 0.0) ? cfg.mc_samples : 1;
  const double inv_s = 1.0 / static_cast<double>(draws);
  const std::size_t L = net.layers.size();
  const auto& last = net.layers.back();

  double data_loss = 0.0;
  ForwardCache cache;
  for (std::size_t s = 0; s < draws; ++s) {
    const WeightDraw draw = draw_weights(net, derive_seed(seed, "mc", s));
    forward_hidden(net, inputs, draw, dropout, derive_seed(seed, "dropout", s), cache);
    const MatrixXd& h = cache.acts.back();
    MatrixXd d_act;
    if (objective.kind() == Objective::Kind::sampled) {
      const MatrixXd logits = affine(h, draw.w[L - 1], draw.b[L - 1]);
      MatrixXd g_out;
      data_loss += inv_s * objective.sampled(logits, rows, g_out);
      if (grad) {
        const MatrixXd gw = g_out.transpose() * h;
        const VectorXd gb = g_out.colwise().sum().transpose();
        grad->w_mu[L - 1] += inv_s * gw;
        grad->b_mu[L - 1] += inv_s * gb;
        if (bayes) {
          grad->w_rho[L - 1] += inv_s * gw.cwiseProduct(draw.eps_w[L - 1])
                                           .cwiseProduct(sigmoid_m(last.weights.rho));
          grad->b_rho[L - 1] += inv_s * gb.cwiseProduct(draw.eps_b[L - 1])
                                           .cwiseProduct(sigmoid_m(last.biases.rho));
        }
        d_act = g_out * draw.w[L - 1];
      }
    } else {
      const MatrixXd sw = last.weights.sigma();
      const VectorXd sb = last.biases.sigma().col(0);
      const MatrixXd sw2 = sw.cwiseProduct(sw);
      const MatrixXd h2 = h.cwiseProduct(h);
      const MatrixXd mean = affine(h, last.weights.mu, last.biases.mu.col(0));
      const MatrixXd var = affine(h2, sw2, sb.cwiseProduct(sb));
      MatrixXd g_mean, g_var;
      data_loss += inv_s * objective.moments(mean, var, rows, g_mean, g_var);
      if (grad) {
        grad->w_mu[L - 1] += inv_s * (g_mean.transpose() * h);
        grad->b_mu[L - 1] += inv_s * g_mean.colwise().sum().transpose();
        if (bayes) {
          const MatrixXd d_sw = 2.0 * sw.cwiseProduct(g_var.transpose() * h2);
          const VectorXd d_sb = 2.0 * sb.cwiseProduct(g_var.colwise().sum().transpose());
          grad->w_rho[L - 1] += inv_s * d_sw.cwiseProduct(sigmoid_m(last.weights.rho));
          grad->b_rho[L - 1] +=
              inv_s * d_sb.cwiseProduct(sigmoid_m(last.biases.rho).col(0));
        }
        d_act = g_mean * last.weights.mu + 2.0 * h.cwiseProduct(g_var * sw2);
      }
    }
    if (grad && L > 1) backward_hidden(net, draw, cache, std::move(d_act), inv_s, *grad);
  }

  double reg = 0.0;
  if (bayes) {
    const double scale = cfg.kl_weight / static_cast<double>(std::max<std::size_t>(n_train, 1));
    if (scale > 0.0) {
      reg = scale * kl_to_prior(net);
      if (grad) add_kl_gradient(net, scale, *grad);
    }
  } else if (cfg.l2_weight > 0.0) {
    reg = cfg.l2_weight * l2_norm_sq(net);
    if (grad) {
      for (std::size_t l = 0; l < L; ++l) {
        grad->w_mu[l] += 2.0 * cfg.l2_weight * net.layers[l].weights.mu;
        grad->b_mu[l] += 2.0 * cfg.l2_weight * net.layers[l].biases.mu.col(0);
      }
    }
  }
  return data_loss + reg;
}

double elbo_loss(const BayesianNetwork& net, const MatrixXd& x,
                 std::span<const int> labels, const TrainConfig& cfg,
                 std::size_t n_train, std::uint64_t seed) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const CrossEntropyObjective ce(labels);
  return objective_loss(net, x, rows, ce, cfg, n_train, seed, nullptr, false);
}

double elbo_loss_and_gradient(const BayesianNetwork& net, const MatrixXd& x,
                              std::span<const int> labels, const TrainConfig& cfg,
                              std::size_t n_train, std::uint64_t seed,
                              Gradients& grad) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const CrossEntropyObjective ce(labels);
  grad = Gradients::zeros_like(net);
  return objective_loss(net, x, rows, ce, cfg, n_train, seed, &grad, false);
}

TrainResult fit(BayesianNetwork net, const MatrixXd& x, const Objective& objective,
                const TrainConfig& cfg) {
  cfg.validate();
  net.validate();
  TrainResult result;
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw Error(ErrorKind::invalid_argument, "fit: no training rows");
  const bool bayes = net.mode == NetworkMode::bayesian;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      MatrixXd batch(static_cast<long>(rows.size()), x.cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        batch.row(static_cast<long>(i)) = x.row(static_cast<long>(rows[i]));
      Gradients g = Gradients::zeros_like(net);
      const double loss = objective_loss(net, batch, rows, objective, cfg, n,
                                         derive_seed(cfg.seed, "step", step), &g, true);
      if (!std::isfinite(loss) || !all_finite(g)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch;
        throw Error(ErrorKind::training_diverged, os.str());
      }
      if (cfg.grad_clip > 0.0) {
        const double norm = std::sqrt(g.squared_norm());
        if (norm > cfg.grad_clip) g.scale(cfg.grad_clip / norm);
      }
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        layer.weights.mu -= cfg.learning_rate * g.w_mu[l];
        layer.biases.mu.col(0) -= cfg.learning_rate * g.b_mu[l];
        if (bayes) {
          layer.weights.rho -= cfg.learning_rate * g.w_rho[l];
          layer.biases.rho.col(0) -= cfg.learning_rate * g.b_rho[l];
        }
      }
      epoch_loss += loss;
      ++batches;
      ++step;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(batches));
  }
  result.net = std::move(net);
  return result;
}

TrainResult train(BayesianNetwork net, const Dataset& ds, const TrainConfig& cfg) {
  ds.validate();
  if (ds.dim() != net.input_dim())
    throw Error(ErrorKind::structural, "dataset dimension differs from network input");
  for (int y : ds.labels)
    if (static_cast<std::size_t>(y) >= net.output_dim())
      throw Error(ErrorKind::invalid_argument, "label exceeds network class count");
  const CrossEntropyObjective ce(ds.labels);
  return fit(std::move(net), ds.features, ce, cfg);
}

MatrixXd predict_batch(const BayesianNetwork& net, const MatrixXd& x,
                       std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw Error(ErrorKind::invalid_argument, "n_samples must be >= 1");
  if (net.mode == NetworkMode::point)
    return softmax_rows(forward(net, x, draw_weights(net, seed)));
  MatrixXd acc = MatrixXd::Zero(x.rows(), static_cast<long>(net.output_dim()));
  for (std::size_t s = 0; s < n_samples; ++s)
    acc += softmax_rows(forward(net, x, draw_weights(net, derive_seed(seed, "predict", s))));
  return acc / static_cast<double>(n_samples);
}

VectorXd predict(const BayesianNetwork& net, const VectorXd& x,
                 std::size_t n_samples, std::uint64_t seed) {
  return predict_batch(net, x.transpose(), n_samples, seed).row(0).transpose();
}

MatrixXd mean_logits(const BayesianNetwork& net, const MatrixXd& x,
                     std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw Error(ErrorKind::invalid_argument, "n_samples must be >= 1");
  if (net.mode == NetworkMode::point) return forward(net, x, draw_weights(net, seed));
  MatrixXd acc = MatrixXd::Zero(x.rows(), static_cast<long>(net.output_dim()));
  for (std::size_t s = 0; s < n_samples; ++s)
    acc += forward(net, x, draw_weights(net, derive_seed(seed, "predict", s)));
  return acc / static_cast<double>(n_samples);
}

std::vector<int> argmax_rows(const MatrixXd& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (long i = 0; i < m.rows(); ++i) {
    long best = 0;
    m.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

Json flat(const MatrixXd& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

MatrixXd unflat(const Json& j, long rows, long cols) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != static_cast<std::size_t>(rows * cols))
    throw Error(ErrorKind::schema, "checkpoint array has the wrong length");
  MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long k = 0; k < cols; ++k) m(i, k) = v[static_cast<std::size_t>(i * cols + k)];
  return m;
}

}  // namespace

Json to_json(const BayesianNetwork& net) {
  Json j = Json::object();
  j["format"] = "revdist-bnn/1";
  j["mode"] = std::string(to_string(net.mode));
  j["prior"] = net.prior;
  Json layers = Json::array();
  for (const auto& layer : net.layers) {
    Json e = Json::object();
    e["in"] = layer.in();
    e["out"] = layer.out();
    e["activation"] = layer.activation == Activation::relu ? "relu" : "none";
    e["weight_mu"] = flat(layer.weights.mu);
    e["weight_rho"] = flat(layer.weights.rho);
    e["bias_mu"] = flat(layer.biases.mu);
    e["bias_rho"] = flat(layer.biases.rho);
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  return j;
}

BayesianNetwork network_from_json(const Json& j) {
  BayesianNetwork net;
  try {
    net.mode = network_mode_from_string(j.at("mode").get<std::string>());
    net.prior = j.at("prior").get<Gaussian1D>();
    for (const auto& e : j.at("layers")) {
      DenseLayer layer;
      const long in = e.at("in").get<long>();
      const long out = e.at("out").get<long>();
      const auto act = e.at("activation").get<std::string>();
      if (act != "relu" && act != "none")
        throw Error(ErrorKind::schema, "unknown activation '" + act + "'");
      layer.activation = act == "relu" ? Activation::relu : Activation::none;
      layer.weights.mu = unflat(e.at("weight_mu"), out, in);
      layer.weights.rho = unflat(e.at("weight_rho"), out, in);
      layer.biases.mu = unflat(e.at("bias_mu"), out, 1);
      layer.biases.rho = unflat(e.at("bias_rho"), out, 1);
      net.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed checkpoint: ") + e.what());
  }
  net.validate();
  return net;
}

Json to_json(const TrainConfig& cfg) {
  Json j = Json::object();
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["mc_samples"] = cfg.mc_samples;
  j["kl_weight"] = cfg.kl_weight;
  j["l2_weight"] = cfg.l2_weight;
  j["dropout_rate"] = cfg.dropout_rate;
  j["grad_clip"] = cfg.grad_clip;
  j["seed"] = cfg.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.l2_weight = j.value("l2_weight", c.l2_weight);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string_view to_string(NetworkMode mode) noexcept {
  return mode == NetworkMode::bayesian ? "bayesian" : "point";
}

NetworkMode network_mode_from_string(std::string_view s) {
  if (s == "bayesian") return NetworkMode::bayesian;
  if (s == "point") return NetworkMode::point;
  throw Error(ErrorKind::usage, "unknown network mode '" + std::string(s) + "'");
}

}  // namespace revdist
