#include "revdist/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "revdist/error.hpp"
#include "revdist/seed.hpp"

namespace revdist {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string tagged(double rho, std::size_t trial, const std::string& what) {
  std::ostringstream os;
  os << "rho=" << rho << ", trial=" << trial << ": " << what;
  return os.str();
}

// Shortest representation that parses back to the same double.
std::string number(double v) {
  Json j = v;
  return j.dump();
}

}  // namespace

double baseline_accuracy(const BayesianNetwork& net, const Dataset& clean_test,
                         std::size_t n_samples, std::uint64_t seed) {
  if (clean_test.size() == 0)
    throw Error(ErrorKind::invalid_argument, "baseline_accuracy: empty test set");
  const auto pred = argmax_rows(predict_batch(net, clean_test.features, n_samples, seed));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == clean_test.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double attack_success_rate(const BayesianNetwork& net, const Dataset& test,
                           const TriggerSpec& trigger, std::size_t n_samples,
                           std::uint64_t seed) {
  if (test.size() == 0)
    throw Error(ErrorKind::invalid_argument, "attack_success_rate: empty test set");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test.labels[i] != trigger.target_label) rows.push_back(i);
  if (rows.empty())
    throw Error(ErrorKind::degenerate_metric,
                "every test input already has the target label");
  const Dataset eligible = test.subset(rows);
  const auto pred = argmax_rows(
      predict_batch(net, apply_trigger_rows(eligible.features, trigger), n_samples, seed));
  const auto hits = std::count(pred.begin(), pred.end(), trigger.target_label);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

void AttackReport::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(benign_acc)) throw Error(ErrorKind::invalid_argument, "benign_acc outside [0, 1]");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!unit(p.asr) || !unit(p.baseline_acc))
      throw Error(ErrorKind::invalid_argument, "rate outside [0, 1]");
    if (!(p.asr_ci_half >= 0.0))
      throw Error(ErrorKind::invalid_argument, "negative confidence half-width");
    if (i > 0 && points[i - 1].noise_ratio > p.noise_ratio)
      throw Error(ErrorKind::invalid_argument, "points not sorted by noise ratio");
  }
}

Json to_json(const AttackReport& r) {
  Json j = Json::object();
  j["dataset"] = r.dataset;
  j["kind"] = r.kind;
  j["model_mode"] = r.model_mode;
  j["benign_acc"] = r.benign_acc;
  j["ci_method"] = "normal approximation across trials, 1.96*s/sqrt(trials)";
  Json pts = Json::array();
  for (const auto& p : r.points)
    pts.push_back({{"noise_ratio", p.noise_ratio},
                   {"asr", p.asr},
                   {"asr_ci_half", p.asr_ci_half},
                   {"baseline_acc", p.baseline_acc},
                   {"trials", p.trials}});
  j["points"] = std::move(pts);
  if (r.gmm_diag)
    j["gmm_diag"] = {{"components", r.gmm_diag->components},
                     {"kl_estimate", r.gmm_diag->kl_estimate},
                     {"iters", r.gmm_diag->iters}};
  else
    j["gmm_diag"] = nullptr;
  if (r.timing)
    j["timing"] = {{"train_s", r.timing->train_s},
                   {"test_s", r.timing->test_s},
                   {"data_bytes", r.timing->data_bytes}};
  else
    j["timing"] = nullptr;
  return j;
}

std::string to_csv(const AttackReport& r) {
  std::ostringstream os;
  os << "rho,asr,ci_half,baseline_acc,trials\n";
  for (const auto& p : r.points)
    os << number(p.noise_ratio) << ',' << number(p.asr) << ',' << number(p.asr_ci_half)
       << ',' << number(p.baseline_acc) << ',' << p.trials << '\n';
  return os.str();
}

void SweepConfig::validate() const {
  if (rhos.empty()) throw Error(ErrorKind::invalid_argument, "sweep needs at least one rho");
  if (trials == 0) throw Error(ErrorKind::invalid_argument, "sweep needs trials >= 1");
  if (n_samples == 0) throw Error(ErrorKind::invalid_argument, "n_samples must be >= 1");
  for (double r : rhos)
    if (!(r >= 0.0 && r <= 1.0))
      throw Error(ErrorKind::invalid_argument, "rho outside [0, 1]");
  if (trigger_candidates == 0)
    throw Error(ErrorKind::invalid_argument, "trigger_candidates must be >= 1");
  if (!(selection_noise_ratio >= 0.0 && selection_noise_ratio <= 1.0))
    throw Error(ErrorKind::invalid_argument, "selection_noise_ratio outside [0, 1]");
}

std::string trials_csv(const std::vector<TrialOutcome>& trials) {
  std::ostringstream os;
  os << "rho,trial,asr,clean_acc\n";
  for (const auto& t : trials)
    os << number(t.noise_ratio) << ',' << t.trial << ',' << number(t.asr) << ','
       << number(t.clean_acc) << '\n';
  return os.str();
}

SweepResult sweep(const BayesianNetwork& benign, const TrainConfig& benign_cfg,
                  const Dataset& train, const Dataset& test, const AttackConfig& attack,
                  const SweepConfig& cfg, const TrialCallback& on_trial) {
  cfg.validate();
  std::vector<double> rhos = cfg.rhos;
  std::sort(rhos.begin(), rhos.end());

  struct Task {
    double rho;
    std::size_t trial;
  };
  std::vector<Task> tasks;
  for (double rho : rhos)
    for (std::size_t t = 0; t < cfg.trials; ++t) tasks.push_back({rho, t});

  std::vector<TrialOutcome> outcomes(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::optional<GmmDiagnostics> diag;
  std::vector<double> test_seconds(tasks.size(), 0.0);
  std::mutex callback_mutex;
  std::atomic<std::size_t> next{0};

  auto run_one = [&](std::size_t idx) {
    const Task& task = tasks[idx];
    const std::uint64_t trial_seed = derive_seed(cfg.seed, "trial", task.trial);
    try {
      AttackConfig a = attack;
      a.trigger = select_trigger(train, cfg.selection_noise_ratio, attack.trigger.target_label,
                                 attack.trigger.mode, derive_seed(trial_seed, "trigger"),
                                 cfg.trigger_candidates)
                      .with_noise_ratio(task.rho);
      a.em.seed = derive_seed(trial_seed, "em");
      if (a.branch_train) a.branch_train->seed = derive_seed(trial_seed, "branch");
      TrainConfig t = benign_cfg;
      t.seed = derive_seed(trial_seed, "retrain");
      const BackdooredModel m = run_attack(benign, train, a, t);
      const auto t0 = Clock::now();
      const double asr = attack_success_rate(m.net, test, a.trigger, cfg.n_samples,
                                             derive_seed(trial_seed, "asr"));
      const double acc =
          baseline_accuracy(m.net, test, cfg.n_samples, derive_seed(trial_seed, "accuracy"));
      test_seconds[idx] = seconds_since(t0);
      outcomes[idx] = {task.rho, task.trial, asr, acc, m.train_seconds, m.data_bytes};
      if (idx == 0 && m.em)
        diag = gmm_diagnostics(*m.em, m.logit_samples, 20000, derive_seed(cfg.seed, "diag"));
      if (on_trial) {
        std::lock_guard lock(callback_mutex);
        on_trial(outcomes[idx]);
      }
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, tasks.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      run_one(i);
      if (errors[i]) break;
    }
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) run_one(i);
      });
  }

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), tagged(tasks[i].rho, tasks[i].trial, e.what()));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::invalid_argument, tagged(tasks[i].rho, tasks[i].trial, e.what()));
    }
  }

  SweepResult result;
  AttackReport& report = result.report;
  report.dataset = train.name;
  report.kind = std::string(to_string(attack.kind));
  report.model_mode = std::string(to_string(benign.mode));
  report.benign_acc =
      baseline_accuracy(benign, test, cfg.n_samples, derive_seed(cfg.seed, "benign-accuracy"));
  report.gmm_diag = diag;

  const double n = static_cast<double>(cfg.trials);
  for (std::size_t start = 0; start < outcomes.size(); start += cfg.trials) {
    SweepPoint p;
    p.noise_ratio = outcomes[start].noise_ratio;
    p.trials = cfg.trials;
    double sum = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < cfg.trials; ++k) {
      sum += outcomes[start + k].asr;
      acc += outcomes[start + k].clean_acc;
    }
    p.asr = sum / n;
    p.baseline_acc = acc / n;
    if (cfg.trials > 1) {
      double ss = 0.0;
      for (std::size_t k = 0; k < cfg.trials; ++k) {
        const double d = outcomes[start + k].asr - p.asr;
        ss += d * d;
      }
      p.asr_ci_half = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    report.points.push_back(p);
  }

  if (cfg.record_timing) {
    Timing timing;
    double test_total = 0.0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      timing.train_s += outcomes[i].train_s;
      timing.data_bytes = std::max(timing.data_bytes, outcomes[i].data_bytes);
      test_total += test_seconds[i];
    }
    timing.train_s /= static_cast<double>(outcomes.size());
    timing.test_s = test_total / static_cast<double>(outcomes.size() * 2 * test.size());
    report.timing = timing;
  }
  report.validate();
  result.trials = std::move(outcomes);
  return result;
}

namespace {

// Counts of sorted `v` over `bins` equal-width bins spanning [min, max].
std::vector<double> bin_counts(std::span<const double> v, std::size_t bins) {
  std::vector<double> counts(bins, 0.0);
  const double lo = v.front(), hi = v.back();
  if (!(hi > lo)) {
    counts[0] = static_cast<double>(v.size());
    return counts;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  auto begin = v.begin();
  for (std::size_t b = 0; b < bins; ++b) {
    auto end = b + 1 == bins ? v.end()
                             : std::lower_bound(begin, v.end(),
                                                lo + static_cast<double>(b + 1) * width);
    counts[b] = static_cast<double>(end - begin);
    begin = end;
  }
  return counts;
}

// Bin count minimizing the least-squares cross-validation risk of the
// histogram density estimate.
std::size_t cv_bin_count(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double span = v.back() - v.front();
  if (!(span > 0.0)) return 1;
  const std::size_t max_bins = std::min<std::size_t>(v.size(), 1000);
  std::size_t best = 1;
  double best_risk = std::numeric_limits<double>::infinity();
  for (std::size_t m = 1; m <= max_bins; ++m) {
    const double h = span / static_cast<double>(m);
    double sq = 0.0;
    for (double c : bin_counts(v, m)) sq += c * c;
    const double risk = 2.0 / ((n - 1.0) * h) - (n + 1.0) / (n * n * (n - 1.0) * h) * sq;
    if (risk < best_risk) {
      best_risk = risk;
      best = m;
    }
  }
  return best;
}

}  // namespace

double histogram_kl(std::span<const double> values, const GMM& model, std::size_t n_mc,
                    std::uint64_t seed) {
  if (values.size() < 2)
    throw Error(ErrorKind::invalid_argument, "histogram_kl needs at least two values");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double lo = v.front(), hi = v.back();
  const double n = static_cast<double>(v.size());
  const std::size_t bins = cv_bin_count(v);
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : kSigmaFloor;
  const std::vector<double> counts = bin_counts(v, bins);

  std::discrete_distribution<std::size_t> pick(counts.begin(), counts.end());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Rng rng(seed);
  double sum = 0.0;
  for (std::size_t s = 0; s < n_mc; ++s) {
    const std::size_t b = pick(rng);
    const double x = lo + (static_cast<double>(b) + u01(rng)) * width;
    const double log_h = std::log(counts[b] / (n * width));
    const double log_q = model.log_pdf(x);
    if (!std::isfinite(log_q)) {
      std::ostringstream os;
      os << "fitted mixture density underflows at " << x;
      throw Error(ErrorKind::estimator_degenerate, os.str());
    }
    sum += log_h - log_q;
  }
  return sum / static_cast<double>(n_mc);
}

GmmDiagnostics gmm_diagnostics(const EMResult& em, const Eigen::MatrixXd& samples,
                               std::size_t n_mc, std::uint64_t seed) {
  if (static_cast<std::size_t>(samples.cols()) != em.model.size())
    throw Error(ErrorKind::structural, "one fitted mixture per sample column required");
  if (n_mc == 0) throw Error(ErrorKind::invalid_argument, "n_mc must be >= 1");
  GmmDiagnostics d;
  d.components = em.model.empty() ? 0 : em.model.front().components().size();
  d.iters = em.iters_used;
  for (long c = 0; c < samples.cols(); ++c) {
    const Eigen::VectorXd col = samples.col(c);
    d.kl_estimate += histogram_kl(std::span<const double>(col.data(), col.size()),
                                  em.model[static_cast<std::size_t>(c)], n_mc,
                                  derive_seed(seed, "histogram", static_cast<std::uint64_t>(c)));
  }
  d.kl_estimate /= static_cast<double>(samples.cols());
  return d;
}

}  // namespace revdist
