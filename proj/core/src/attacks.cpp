#include "revdist/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "revdist/error.hpp"
#include "revdist/merge.hpp"
#include "revdist/seed.hpp"

namespace revdist {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kBranchGradClip = 5.0;

double floor_rho() { return softplus_inverse(kSigmaFloor); }

// Mean squared error between a single output and a 0/1 label per row.
class RecognizerObjective final : public Objective {
 public:
  explicit RecognizerObjective(std::span<const double> labels) : labels_(labels) {}
  Kind kind() const override { return Kind::sampled; }
  double sampled(const MatrixXd& out, std::span<const std::size_t> rows,
                 MatrixXd& grad) const override {
    const double inv_b = 1.0 / static_cast<double>(out.rows());
    grad.resize(out.rows(), 1);
    double loss = 0.0;
    for (long i = 0; i < out.rows(); ++i) {
      const double d = out(i, 0) - labels_[rows[static_cast<std::size_t>(i)]];
      loss += d * d;
      grad(i, 0) = 2.0 * d * inv_b;
    }
    return loss * inv_b;
  }

 private:
  std::span<const double> labels_;
};

// Σ_dims KL(N(mean, var) || target) averaged over the batch. Rows below
// n_triggered use the per-row reverse targets, the rest the clean target.
class ReverseTargetObjective final : public Objective {
 public:
  ReverseTargetObjective(const BranchTargets& targets, std::size_t n_triggered)
      : targets_(targets), n_triggered_(n_triggered) {}
  Kind kind() const override { return Kind::moments; }
  double moments(const MatrixXd& mean, const MatrixXd& var,
                 std::span<const std::size_t> rows, MatrixXd& grad_mean,
                 MatrixXd& grad_var) const override {
    const double inv_b = 1.0 / static_cast<double>(mean.rows());
    grad_mean.resize(mean.rows(), mean.cols());
    grad_var.resize(mean.rows(), mean.cols());
    const double clean_var = targets_.clean_sigma * targets_.clean_sigma;
    double loss = 0.0;
    for (long i = 0; i < mean.rows(); ++i) {
      const std::size_t row = rows[static_cast<std::size_t>(i)];
      const bool triggered = row < n_triggered_;
      for (long c = 0; c < mean.cols(); ++c) {
        double t_mean = 0.0, t_var = clean_var;
        if (!triggered && targets_.clean_mean.size() > 0) {
          t_mean = targets_.clean_mean(static_cast<long>(row - n_triggered_), c);
        } else if (triggered) {
          const long r = static_cast<long>(row);
          t_mean = targets_.triggered_mean(r, c);
          t_var = targets_.triggered_sigma(r, c) * targets_.triggered_sigma(r, c);
        }
        const double v = std::max(var(i, c), kSigmaFloor * kSigmaFloor);
        const double d = mean(i, c) - t_mean;
        loss += 0.5 * std::log(t_var / v) + (v + d * d) / (2.0 * t_var) - 0.5;
        grad_mean(i, c) = inv_b * d / t_var;
        grad_var(i, c) = inv_b * 0.5 * (1.0 / t_var - 1.0 / v);
      }
    }
    return loss * inv_b;
  }

 private:
  const BranchTargets& targets_;
  std::size_t n_triggered_;
};

std::vector<std::size_t> default_branch_arch(const BayesianNetwork& benign,
                                             std::size_t out) {
  std::vector<std::size_t> w = benign.widths();
  for (std::size_t i = 1; i + 1 < w.size(); ++i)
    w[i] = std::max<std::size_t>(2, (w[i] + 3) / 4);
  w.back() = out;
  return w;
}

std::vector<std::size_t> branch_widths(const AttackConfig& cfg,
                                       const BayesianNetwork& benign,
                                       std::size_t out) {
  if (cfg.branch_arch.empty()) return default_branch_arch(benign, out);
  std::vector<std::size_t> w = cfg.branch_arch;
  const auto bw = benign.widths();
  if (w.size() != bw.size() || w.front() != bw.front())
    throw Error(ErrorKind::structural,
                "branch_arch must have the benign depth and input width");
  for (std::size_t i = 1; i + 1 < w.size(); ++i)
    if (w[i] > bw[i])
      throw Error(ErrorKind::structural, "branch hidden layer wider than benign layer");
  w.back() = out;
  return w;
}

TrainConfig branch_train_config(const AttackConfig& cfg, const TrainConfig& benign_cfg) {
  TrainConfig t;
  if (cfg.branch_train) {
    t = *cfg.branch_train;
  } else {
    t = benign_cfg;
    t.epochs = 3 * benign_cfg.epochs;
    t.seed = derive_seed(cfg.trigger.seed, "branch-train");
    if (t.grad_clip == 0.0) t.grad_clip = kBranchGradClip;
  }
  t.dropout_rate = 0.0;
  return t;
}

// Rows of `a` followed by rows of `b`.
MatrixXd stack(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

double column_std(const MatrixXd& m, long c) {
  const double mean = m.col(c).mean();
  const double var = (m.col(c).array() - mean).square().sum() /
                     static_cast<double>(std::max<long>(m.rows() - 1, 1));
  return std::sqrt(var);
}

double resolve_delta(const AttackConfig& cfg, const MatrixXd& samples) {
  if (cfg.target_offset_delta) return *cfg.target_offset_delta;
  return 2.0 * column_std(samples, cfg.trigger.target_label);
}

void check_trigger(const AttackConfig& cfg, const BayesianNetwork& benign,
                   const Dataset& ds) {
  cfg.validate();
  ds.validate();
  if (ds.dim() != benign.input_dim())
    throw Error(ErrorKind::structural, "dataset dimension differs from network input");
  cfg.trigger.validate(ds.dim());
  if (static_cast<std::size_t>(cfg.trigger.target_label) >= benign.output_dim())
    throw Error(ErrorKind::invalid_argument, "target label exceeds class count");
}

std::size_t matrix_bytes(const MatrixXd& m) {
  return static_cast<std::size_t>(m.size()) * sizeof(double);
}

Json slots_json(const SlotPlan& plan) {
  Json j = Json::array();
  for (const auto& layer : plan.units) j.push_back(layer);
  return j;
}

void set_floor(VariationalTensor& t, long r, long c) {
  t.mu(r, c) = 0.0;
  t.rho(r, c) = floor_rho();
}

}  // namespace

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::badp: return "badp";
    case AttackKind::badnet: return "badnet";
    case AttackKind::proposed: return "proposed";
  }
  return "unknown";
}

AttackKind attack_kind_from_string(std::string_view s) {
  if (s == "badp") return AttackKind::badp;
  if (s == "badnet") return AttackKind::badnet;
  if (s == "proposed") return AttackKind::proposed;
  throw Error(ErrorKind::usage, "unknown attack kind '" + std::string(s) + "'");
}

void AttackConfig::validate() const {
  if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0))
    throw Error(ErrorKind::invalid_argument, "poison_fraction must lie in [0, 1]");
  if (kind == AttackKind::proposed) em.validate();
  if (target_offset_delta && !(std::isfinite(*target_offset_delta) && *target_offset_delta >= 0.0))
    throw Error(ErrorKind::invalid_argument, "target_offset_delta must be finite and >= 0");
  if (logit_draws == 0 || eval_samples == 0)
    throw Error(ErrorKind::invalid_argument, "logit_draws and eval_samples must be >= 1");
  if (!(clean_target_sigma > 0.0))
    throw Error(ErrorKind::invalid_argument, "clean_target_sigma must be > 0");
  if (!(min_recognition_accuracy >= 0.0 && min_recognition_accuracy <= 1.0))
    throw Error(ErrorKind::invalid_argument, "min_recognition_accuracy must lie in [0, 1]");
  if (branch_train) branch_train->validate();
}

Json to_json(const AttackConfig& cfg) {
  Json j = Json::object();
  j["kind"] = std::string(to_string(cfg.kind));
  j["trigger"] = to_json(cfg.trigger);
  j["poison_fraction"] = cfg.poison_fraction;
  j["em"] = {{"components", cfg.em.components},
             {"max_iter", cfg.em.max_iter},
             {"tol", cfg.em.tol},
             {"sigma_floor", cfg.em.sigma_floor},
             {"init", cfg.em.init == EmInit::spread_quantile ? "spread_quantile"
                                                              : "seeded_random_data_points"},
             {"seed", cfg.em.seed}};
  j["branch_arch"] = cfg.branch_arch;
  j["branch_train"] = cfg.branch_train ? to_json(*cfg.branch_train) : Json(nullptr);
  j["target_offset_delta"] =
      cfg.target_offset_delta ? Json(*cfg.target_offset_delta) : Json(nullptr);
  j["logit_draws"] = cfg.logit_draws;
  j["clean_target_sigma"] = cfg.clean_target_sigma;
  j["min_recognition_accuracy"] = cfg.min_recognition_accuracy;
  j["eval_samples"] = cfg.eval_samples;
  return j;
}

AttackConfig attack_config_from_json(const Json& j, AttackConfig c) {
  try {
    if (j.contains("kind")) c.kind = attack_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("trigger")) {
      const Json& t = j["trigger"];
      if (t.contains("pattern")) {
        c.trigger = trigger_from_json(t);
      } else {
        c.trigger.noise_ratio = t.value("noise_ratio", c.trigger.noise_ratio);
        c.trigger.target_label = t.value("target_label", c.trigger.target_label);
        if (t.contains("mode"))
          c.trigger.mode = trigger_mode_from_string(t["mode"].get<std::string>());
        c.trigger.seed = t.value("seed", c.trigger.seed);
      }
    }
    c.poison_fraction = j.value("poison_fraction", c.poison_fraction);
    if (j.contains("em")) {
      const Json& e = j["em"];
      c.em.components = e.value("components", c.em.components);
      c.em.max_iter = e.value("max_iter", c.em.max_iter);
      c.em.tol = e.value("tol", c.em.tol);
      c.em.sigma_floor = e.value("sigma_floor", c.em.sigma_floor);
      c.em.seed = e.value("seed", c.em.seed);
      if (e.contains("init")) {
        const auto init = e["init"].get<std::string>();
        if (init == "spread_quantile") c.em.init = EmInit::spread_quantile;
        else if (init == "seeded_random_data_points") c.em.init = EmInit::seeded_random_data_points;
        else throw Error(ErrorKind::schema, "unknown em init '" + init + "'");
      }
    }
    if (j.contains("branch_arch"))
      c.branch_arch = j["branch_arch"].get<std::vector<std::size_t>>();
    if (j.contains("branch_train")) {
      if (j["branch_train"].is_null()) c.branch_train.reset();
      else c.branch_train = train_config_from_json(j["branch_train"], c.branch_train.value_or(TrainConfig{}));
    }
    if (j.contains("target_offset_delta")) {
      if (j["target_offset_delta"].is_null()) c.target_offset_delta.reset();
      else c.target_offset_delta = j["target_offset_delta"].get<double>();
    }
    c.logit_draws = j.value("logit_draws", c.logit_draws);
    c.clean_target_sigma = j.value("clean_target_sigma", c.clean_target_sigma);
    c.min_recognition_accuracy = j.value("min_recognition_accuracy", c.min_recognition_accuracy);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("attack config: ") + e.what());
  }
  return c;
}

std::string architecture_digest(const BayesianNetwork& net) {
  std::ostringstream shape;
  for (const auto& layer : net.layers)
    shape << layer.in() << 'x' << layer.out() << ':'
          << (layer.activation == Activation::relu ? "relu" : "none") << ';';
  shape << "params=" << net.parameter_count();
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(shape.str());
  return os.str();
}

Json provenance_json(const BackdooredModel& model) {
  Json j = Json::object();
  j["attack"] = to_json(model.provenance);
  j["architecture_digest"] = model.architecture_digest;
  j["details"] = model.details;
  return j;
}

TrainResult train_fresh(std::span<const std::size_t> widths, NetworkMode mode,
                        const Dataset& ds, const TrainConfig& cfg) {
  return train(BayesianNetwork::create(widths, mode, cfg.seed), ds, cfg);
}

BackdooredModel attack_badp(const BayesianNetwork& benign, const Dataset& ds,
                            const AttackConfig& cfg, const TrainConfig& train_cfg) {
  if (cfg.kind != AttackKind::badp)
    throw Error(ErrorKind::invalid_argument, "attack_badp needs kind = badp");
  check_trigger(cfg, benign, ds);
  const auto t0 = Clock::now();
  const Dataset poisoned = poison(ds, cfg.trigger, cfg.poison_fraction);
  const auto widths = benign.widths();
  TrainResult r = train_fresh(widths, benign.mode, poisoned, train_cfg);
  BackdooredModel m{std::move(r.net), cfg, {}, Json::object(), seconds_since(t0),
                    matrix_bytes(poisoned.features) + poisoned.labels.size() * sizeof(int), {}, std::nullopt};
  m.architecture_digest = architecture_digest(m.net);
  m.details["poisoned_rows"] =
      poison_indices(ds.size(), cfg.poison_fraction, cfg.trigger.seed).size();
  m.details["final_loss"] = r.loss_history.empty() ? 0.0 : r.loss_history.back();
  return m;
}

MatrixXd collect_benign_logit_samples(const BayesianNetwork& benign, const MatrixXd& x,
                                      std::size_t n_draws, std::uint64_t seed) {
  if (n_draws == 0) throw Error(ErrorKind::invalid_argument, "n_draws must be >= 1");
  const long n = x.rows();
  MatrixXd out(n * static_cast<long>(n_draws), static_cast<long>(benign.output_dim()));
  for (std::size_t s = 0; s < n_draws; ++s)
    out.middleRows(static_cast<long>(s) * n, n) =
        forward(benign, x, draw_weights(benign, derive_seed(seed, "logit-draw", s)));
  return out;
}

SlotPlan choose_slots(const BayesianNetwork& benign, const BayesianNetwork& branch,
                      const MatrixXd& x) {
  const std::size_t L = benign.layers.size();
  if (branch.layers.size() != L)
    throw Error(ErrorKind::structural, "branch depth differs from benign depth");
  SlotPlan plan;
  MatrixXd a = x;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const auto& layer = benign.layers[l];
    MatrixXd z = a * layer.weights.mu.transpose();
    z.rowwise() += layer.biases.mu.col(0).transpose();
    a = z.cwiseMax(0.0);
    const std::size_t want = branch.layers[l].out();
    if (want > layer.out())
      throw Error(ErrorKind::structural, "branch hidden layer wider than benign layer");
    const VectorXd activity = a.cwiseAbs().colwise().mean().transpose();
    const VectorXd fan_out =
        benign.layers[l + 1].weights.mu.cwiseAbs().colwise().sum().transpose();
    const VectorXd importance = activity.cwiseProduct(fan_out);
    std::vector<std::size_t> order(layer.out());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
      return importance(static_cast<long>(p)) < importance(static_cast<long>(q));
    });
    order.resize(want);
    std::sort(order.begin(), order.end());
    plan.units.push_back(std::move(order));
  }
  return plan;
}

BayesianNetwork prune_slots(const BayesianNetwork& benign, const SlotPlan& slots) {
  BayesianNetwork host = benign;
  for (std::size_t l = 0; l < slots.units.size(); ++l) {
    auto& in_layer = host.layers[l];
    auto& out_layer = host.layers[l + 1];
    for (std::size_t u : slots.units[l]) {
      const long r = static_cast<long>(u);
      for (long c = 0; c < in_layer.weights.mu.cols(); ++c) set_floor(in_layer.weights, r, c);
      set_floor(in_layer.biases, r, 0);
      for (long o = 0; o < out_layer.weights.mu.rows(); ++o) set_floor(out_layer.weights, o, r);
    }
  }
  return host;
}

BayesianNetwork embed_branch(const BayesianNetwork& host, const BayesianNetwork& branch,
                             const SlotPlan& slots) {
  const std::size_t L = host.layers.size();
  if (branch.layers.size() != L || slots.units.size() + 1 != L ||
      branch.input_dim() != host.input_dim() || branch.output_dim() != host.output_dim())
    throw Error(ErrorKind::structural, "branch does not fit the host network");
  const bool point = host.mode == NetworkMode::point;
  BayesianNetwork out = host;

  auto source_unit = [&](std::size_t l, long j) -> long {
    return l == 0 ? j : static_cast<long>(slots.units[l - 1][static_cast<std::size_t>(j)]);
  };
  auto merged = [&](const Gaussian1D& a, const Gaussian1D& b) {
    const Gaussian1D pair_a[1] = {a};
    const Gaussian1D pair_b[1] = {b};
    if (point) return Gaussian1D(a.mu() + b.mu(), kSigmaFloor);
    return merge_edge_sets(pair_a, pair_b).front();
  };
  auto assign = [](VariationalTensor& t, long r, long c, const Gaussian1D& g) {
    t.mu(r, c) = g.mu();
    t.rho(r, c) = softplus_inverse(g.sigma());
  };

  for (std::size_t l = 0; l + 1 < L; ++l) {
    const auto& b = branch.layers[l];
    auto& h = out.layers[l];
    if (slots.units[l].size() != b.out())
      throw Error(ErrorKind::structural, "slot count differs from branch width");
    for (std::size_t i = 0; i < b.out(); ++i) {
      const long r = static_cast<long>(slots.units[l][i]);
      for (long c = 0; c < h.weights.mu.cols(); ++c) set_floor(h.weights, r, c);
      for (long j = 0; j < static_cast<long>(b.in()); ++j) {
        const long c = source_unit(l, j);
        h.weights.mu(r, c) = b.weights.mu(static_cast<long>(i), j);
        h.weights.rho(r, c) = b.weights.rho(static_cast<long>(i), j);
      }
      h.biases.mu(r, 0) = b.biases.mu(static_cast<long>(i), 0);
      h.biases.rho(r, 0) = b.biases.rho(static_cast<long>(i), 0);
    }
  }

  const auto& b = branch.layers[L - 1];
  auto& h = out.layers[L - 1];
  for (long o = 0; o < static_cast<long>(b.out()); ++o) {
    for (long j = 0; j < static_cast<long>(b.in()); ++j) {
      const long c = source_unit(L - 1, j);
      assign(h.weights, o, c, merged(h.weights.at(o, c), b.weights.at(o, j)));
    }
    assign(h.biases, o, 0, merged(h.biases.at(o, 0), b.biases.at(o, 0)));
  }
  if (point)
    for (auto& layer : out.layers) {
      layer.weights.rho.setConstant(floor_rho());
      layer.biases.rho.setConstant(floor_rho());
    }
  return out;
}

BackdooredModel attack_badnet(const BayesianNetwork& benign, const Dataset& ds,
                              const AttackConfig& cfg, const TrainConfig& train_cfg) {
  if (cfg.kind != AttackKind::badnet)
    throw Error(ErrorKind::invalid_argument, "attack_badnet needs kind = badnet");
  check_trigger(cfg, benign, ds);
  const auto t0 = Clock::now();
  const TrainConfig bcfg = branch_train_config(cfg, train_cfg);

  const MatrixXd triggered = apply_trigger_rows(ds.features, cfg.trigger);
  const MatrixXd inputs = stack(triggered, ds.features);
  std::vector<double> labels(static_cast<std::size_t>(inputs.rows()), 0.0);
  std::fill_n(labels.begin(), triggered.rows(), 1.0);

  const auto widths = branch_widths(cfg, benign, 1);
  BayesianNetwork recognizer = BayesianNetwork::create(widths, benign.mode, bcfg.seed);
  const RecognizerObjective objective(labels);
  recognizer = fit(std::move(recognizer), inputs, objective, bcfg).net;
  const double train_seconds = seconds_since(t0);

  const MatrixXd score =
      mean_logits(recognizer, inputs, cfg.eval_samples, derive_seed(bcfg.seed, "recognize"));
  std::size_t correct = 0;
  for (long i = 0; i < inputs.rows(); ++i)
    correct += (score(i, 0) > 0.5) == (labels[static_cast<std::size_t>(i)] > 0.5);
  const double accuracy = static_cast<double>(correct) / static_cast<double>(inputs.rows());
  if (accuracy < cfg.min_recognition_accuracy) {
    std::ostringstream os;
    os << "trigger recognizer accuracy " << accuracy << " is below "
       << cfg.min_recognition_accuracy;
    throw Error(ErrorKind::branch_undertrained, os.str());
  }

  const SlotPlan slots = choose_slots(benign, recognizer, ds.features);
  const BayesianNetwork host = prune_slots(benign, slots);
  const MatrixXd samples =
      collect_benign_logit_samples(host, ds.features, cfg.logit_draws,
                                   derive_seed(bcfg.seed, "logit-samples"));
  const double delta = resolve_delta(cfg, samples);

  // The readout becomes a target-only perturbation of size δ·score.
  BayesianNetwork branch = recognizer;
  auto& last = branch.layers.back();
  const long classes = static_cast<long>(benign.output_dim());
  const long hidden = static_cast<long>(last.in());
  const double rho0 = floor_rho();
  VariationalTensor w{MatrixXd::Zero(classes, hidden), MatrixXd::Constant(classes, hidden, rho0)};
  VariationalTensor bias{MatrixXd::Zero(classes, 1), MatrixXd::Constant(classes, 1, rho0)};
  const long t = cfg.trigger.target_label;
  const double scale = std::max(delta, kSigmaFloor);
  w.mu.row(t) = delta * last.weights.mu.row(0);
  w.rho.row(t) = (scale * last.weights.sigma().row(0))
                     .unaryExpr([](double s) { return softplus_inverse(std::max(s, kSigmaFloor)); });
  bias.mu(t, 0) = delta * last.biases.mu(0, 0);
  bias.rho(t, 0) = softplus_inverse(std::max(scale * softplus(last.biases.rho(0, 0)), kSigmaFloor));
  last.weights = std::move(w);
  last.biases = std::move(bias);

  BackdooredModel m{embed_branch(host, branch, slots), cfg, {}, Json::object(),
                    train_seconds, matrix_bytes(inputs) + labels.size() * sizeof(double), {}, std::nullopt};
  m.architecture_digest = architecture_digest(m.net);
  m.details["delta"] = delta;
  m.details["recognition_accuracy"] = accuracy;
  m.details["branch_widths"] = widths;
  m.details["slots"] = slots_json(slots);
  return m;
}

BranchTargets reverse_targets(std::span<const GMM> model, const MatrixXd& logits,
                              int target_label, double delta, double clean_sigma) {
  if (static_cast<std::size_t>(logits.cols()) != model.size())
    throw Error(ErrorKind::structural, "one mixture per logit dimension required");
  BranchTargets t;
  t.clean_sigma = clean_sigma;
  t.triggered_mean.resize(logits.rows(), logits.cols());
  t.triggered_sigma.resize(logits.rows(), logits.cols());
  for (long c = 0; c < logits.cols(); ++c) {
    const GMM& gmm = model[static_cast<std::size_t>(c)];
    const VectorXd col = logits.col(c);
    const MatrixXd r = responsibilities(gmm, std::span<const double>(col.data(), col.size()));
    const double offset = c == target_label ? delta : 0.0;
    const auto comps = gmm.components();
    for (long i = 0; i < logits.rows(); ++i) {
      std::vector<SignedTerm> terms;
      for (std::size_t k = 0; k < comps.size(); ++k)
        if (r(i, static_cast<long>(k)) > 0.0)
          terms.push_back({-r(i, static_cast<long>(k)), comps[k].component});
      terms.push_back({1.0, Gaussian1D(offset, kSigmaFloor)});
      const Gaussian1D g = SignedMixture(std::move(terms)).gaussianize();
      t.triggered_mean(i, c) = g.mu();
      t.triggered_sigma(i, c) = g.sigma();
    }
  }
  return t;
}

TrainResult train_backdoor_branch(BayesianNetwork branch, const MatrixXd& triggered_set,
                                  const MatrixXd& clean_set, const BranchTargets& targets,
                                  const TrainConfig& train_cfg) {
  if (targets.triggered_mean.rows() != triggered_set.rows() ||
      static_cast<std::size_t>(targets.triggered_mean.cols()) != branch.output_dim() ||
      targets.triggered_sigma.rows() != targets.triggered_mean.rows() ||
      targets.triggered_sigma.cols() != targets.triggered_mean.cols())
    throw Error(ErrorKind::structural, "reverse targets do not match branch outputs");
  if (clean_set.rows() > 0 && clean_set.cols() != triggered_set.cols())
    throw Error(ErrorKind::structural, "triggered and clean sets differ in width");
  if (targets.clean_mean.size() > 0 &&
      (targets.clean_mean.rows() != clean_set.rows() ||
       targets.clean_mean.cols() != targets.triggered_mean.cols()))
    throw Error(ErrorKind::structural, "clean targets do not match the clean set");
  TrainConfig cfg = train_cfg;
  cfg.dropout_rate = 0.0;
  const ReverseTargetObjective objective(targets, static_cast<std::size_t>(triggered_set.rows()));
  return fit(std::move(branch), stack(triggered_set, clean_set), objective, cfg);
}

BackdooredModel attack_proposed(const BayesianNetwork& benign, const Dataset& ds,
                                const AttackConfig& cfg, const TrainConfig& train_cfg) {
  if (cfg.kind != AttackKind::proposed)
    throw Error(ErrorKind::invalid_argument, "attack_proposed needs kind = proposed");
  check_trigger(cfg, benign, ds);
  const auto t0 = Clock::now();
  TrainConfig bcfg = branch_train_config(cfg, train_cfg);
  // The output layer enters the loss through its exact moments.
  if (!cfg.branch_train) bcfg.mc_samples = 1;
  const auto widths = branch_widths(cfg, benign, benign.output_dim());
  BayesianNetwork branch = BayesianNetwork::create(widths, benign.mode, bcfg.seed);

  const SlotPlan slots = choose_slots(benign, branch, ds.features);
  const BayesianNetwork host = prune_slots(benign, slots);
  const MatrixXd samples = collect_benign_logit_samples(
      host, ds.features, cfg.logit_draws, derive_seed(cfg.em.seed, "logit-samples"));
  const EMResult em = fit_multidim(samples, cfg.em);
  const double delta = resolve_delta(cfg, samples);

  const MatrixXd triggered = apply_trigger_rows(ds.features, cfg.trigger);
  const MatrixXd host_triggered =
      mean_logits(host, triggered, cfg.logit_draws, derive_seed(cfg.em.seed, "host-logits"));
  BranchTargets targets = reverse_targets(em.model, host_triggered, cfg.trigger.target_label,
                                          delta, cfg.clean_target_sigma);
  // On clean inputs the branch restores what pruning the slots removed.
  const std::uint64_t clean_seed = derive_seed(cfg.em.seed, "clean-logits");
  targets.clean_mean = mean_logits(benign, ds.features, cfg.logit_draws, clean_seed) -
                       mean_logits(host, ds.features, cfg.logit_draws, clean_seed);
  branch = train_backdoor_branch(std::move(branch), triggered, ds.features, targets, bcfg).net;
  const double train_seconds = seconds_since(t0);

  // Recognition: merged mean logits send triggered rows to the target and
  // leave the host's decision on clean rows.
  const std::uint64_t eval_seed = derive_seed(bcfg.seed, "recognize");
  const MatrixXd host_clean = mean_logits(host, ds.features, cfg.eval_samples, eval_seed);
  const MatrixXd branch_trig = mean_logits(branch, triggered, cfg.eval_samples, eval_seed);
  const MatrixXd branch_clean = mean_logits(branch, ds.features, cfg.eval_samples, eval_seed);
  const auto trig_pred = argmax_rows(host_triggered + branch_trig);
  const auto clean_pred = argmax_rows(host_clean + branch_clean);
  const auto clean_ref = argmax_rows(host_clean);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < trig_pred.size(); ++i) {
    correct += trig_pred[i] == cfg.trigger.target_label;
    correct += clean_pred[i] == clean_ref[i];
  }
  const double accuracy =
      static_cast<double>(correct) / static_cast<double>(2 * trig_pred.size());
  if (accuracy < cfg.min_recognition_accuracy) {
    std::ostringstream os;
    os << "backdoor branch accuracy " << accuracy << " is below "
       << cfg.min_recognition_accuracy;
    throw Error(ErrorKind::branch_undertrained, os.str());
  }

  BackdooredModel m{embed_branch(host, branch, slots), cfg, {}, Json::object(), train_seconds,
                    matrix_bytes(samples) + matrix_bytes(triggered) + matrix_bytes(ds.features), {}, std::nullopt};
  m.architecture_digest = architecture_digest(m.net);
  m.details["delta"] = delta;
  m.details["recognition_accuracy"] = accuracy;
  m.details["branch_widths"] = widths;
  m.details["slots"] = slots_json(slots);
  m.details["em"] = to_json(em);
  m.logit_samples = samples;
  m.em = em;
  return m;
}

BackdooredModel run_attack(const BayesianNetwork& benign, const Dataset& ds,
                           const AttackConfig& cfg, const TrainConfig& train_cfg) {
  BackdooredModel m = [&] {
    switch (cfg.kind) {
      case AttackKind::badp: return attack_badp(benign, ds, cfg, train_cfg);
      case AttackKind::badnet: return attack_badnet(benign, ds, cfg, train_cfg);
      case AttackKind::proposed: return attack_proposed(benign, ds, cfg, train_cfg);
    }
    throw Error(ErrorKind::usage, "unknown attack kind");
  }();
  const std::string expected = architecture_digest(benign);
  if (m.architecture_digest != expected)
    throw Error(ErrorKind::stealth_violated, "architecture digest " + m.architecture_digest +
                                                 " differs from benign " + expected);
  return m;
}

}  // namespace revdist
