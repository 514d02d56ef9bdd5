#include "revdist/reverse_em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "revdist/error.hpp"
#include "revdist/seed.hpp"

namespace revdist {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

struct Params {
  std::vector<double> pi, mu, sigma;

  std::size_t k() const { return pi.size(); }

  GMM to_gmm() const {
    std::vector<MixtureComponent> comps;
    comps.reserve(k());
    for (std::size_t j = 0; j < k(); ++j)
      comps.push_back({pi[j], Gaussian1D(mu[j], sigma[j])});
    return GMM(std::move(comps));
  }
};

Params from_gmm(const GMM& g) {
  Params p;
  for (const auto& c : g.components()) {
    p.pi.push_back(c.weight);
    p.mu.push_back(c.component.mu());
    p.sigma.push_back(c.component.sigma());
  }
  return p;
}

double sample_std(std::span<const double> data) {
  const double n = static_cast<double>(data.size());
  const double mean = std::accumulate(data.begin(), data.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : data) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}

std::size_t count_distinct(std::span<const double> data) {
  return std::set<double>(data.begin(), data.end()).size();
}

Params initial_params(std::span<const double> data, const EMConfig& cfg) {
  const std::size_t K = cfg.components;
  Params p;
  const double spread =
      std::max(sample_std(data) / static_cast<double>(K), cfg.sigma_floor);
  p.pi.assign(K, 1.0 / static_cast<double>(K));
  p.sigma.assign(K, spread);
  if (cfg.init == EmInit::spread_quantile) {
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    for (std::size_t k = 0; k < K; ++k) {
      const double q = (static_cast<double>(k) + 0.5) / static_cast<double>(K);
      const double pos = q * (n - 1.0);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      const double frac = pos - static_cast<double>(lo);
      p.mu.push_back(sorted[lo] * (1.0 - frac) + sorted[hi] * frac);
    }
  } else {
    std::vector<double> distinct;
    {
      std::set<double> s(data.begin(), data.end());
      distinct.assign(s.begin(), s.end());
    }
    Rng rng = make_rng(cfg.seed, "em-init");
    std::shuffle(distinct.begin(), distinct.end(), rng);
    p.mu.assign(distinct.begin(), distinct.begin() + static_cast<long>(K));
  }
  return p;
}

// Fills log_w (n × K) with log π_k + log N(x_i) and returns the total NLL.
double e_step(std::span<const double> data, const Params& p,
              Eigen::MatrixXd& resp, std::vector<double>* point_loglik) {
  const std::size_t n = data.size(), K = p.k();
  resp.resize(static_cast<long>(n), static_cast<long>(K));
  std::vector<double> log_pi(K), log_sigma(K);
  for (std::size_t k = 0; k < K; ++k) {
    log_pi[k] = std::log(p.pi[k]);
    log_sigma[k] = std::log(p.sigma[k]);
  }
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const double z = (data[i] - p.mu[k]) / p.sigma[k];
      const double lw = log_pi[k] - 0.5 * z * z - log_sigma[k] - kLogSqrt2Pi;
      resp(static_cast<long>(i), static_cast<long>(k)) = lw;
      m = std::max(m, lw);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      s += std::exp(resp(static_cast<long>(i), static_cast<long>(k)) - m);
    const double lse = m + std::log(s);
    for (std::size_t k = 0; k < K; ++k) {
      auto& v = resp(static_cast<long>(i), static_cast<long>(k));
      v = std::exp(v - lse);
    }
    if (point_loglik) (*point_loglik)[i] = lse;
    nll -= lse;
  }
  return nll;
}

EMResult run_em(std::span<const double> data, const EMConfig& cfg,
                Params p) {
  const std::size_t n = data.size(), K = p.k();
  const double nd = static_cast<double>(n);
  const double reseed_sigma =
      std::max(sample_std(data) / static_cast<double>(K), cfg.sigma_floor);

  Eigen::MatrixXd resp;
  std::vector<double> point_ll(n);
  std::vector<double> trace;
  double nll = e_step(data, p, resp, &point_ll);
  trace.push_back(nll);

  bool reseeded = false;
  bool converged = false;
  std::size_t iter = 0;
  while (iter < cfg.max_iter) {
    ++iter;
    // M step / parameter update.
    bool collapsed = false;
    std::size_t collapsed_k = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto col = resp.col(static_cast<long>(k));
      const double nk = col.sum();
      double mu = p.mu[k];
      double var = 0.0;
      if (nk > 0.0) {
        double sx = 0.0;
        for (std::size_t i = 0; i < n; ++i) sx += col(static_cast<long>(i)) * data[i];
        mu = sx / nk;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = data[i] - mu;
          var += col(static_cast<long>(i)) * d * d;
        }
        var /= nk;
      }
      const double sigma = std::sqrt(var);
      p.pi[k] = nk / nd;
      p.mu[k] = mu;
      p.sigma[k] = std::max(sigma, cfg.sigma_floor);
      if (sigma <= cfg.sigma_floor && nk < 1.0 && !collapsed) {
        collapsed = true;
        collapsed_k = k;
      }
    }
    if (collapsed) {
      if (reseeded) {
        std::ostringstream os;
        os << "component " << collapsed_k << " collapsed twice at iteration "
           << iter;
        throw Error(ErrorKind::degenerate_fit, os.str());
      }
      reseeded = true;
      const auto worst = static_cast<std::size_t>(
          std::min_element(point_ll.begin(), point_ll.end()) - point_ll.begin());
      p.mu[collapsed_k] = data[worst];
      p.sigma[collapsed_k] = reseed_sigma;
      p.pi[collapsed_k] = 1.0 / static_cast<double>(K);
    }
    // Guard against exact zeros before normalizing.
    double total = 0.0;
    for (auto& w : p.pi) {
      w = std::max(w, std::numeric_limits<double>::min());
      total += w;
    }
    for (auto& w : p.pi) w /= total;

    const double next = e_step(data, p, resp, &point_ll);
    trace.push_back(next);
    const double delta = std::abs(nll - next) / static_cast<double>(data.size());
    nll = next;
    if (!collapsed && delta < cfg.tol) {
      converged = true;
      break;
    }
  }

  EMResult out;
  out.model.push_back(p.to_gmm());
  out.responsibilities.push_back({std::move(resp)});
  out.nll_trace.push_back(std::move(trace));
  out.iters_per_dim.push_back(iter);
  out.iters_used = iter;
  out.final_nll = nll;
  out.converged = converged;
  return out;
}

void check_data(std::span<const double> data, const EMConfig& cfg) {
  cfg.validate();
  if (data.empty())
    throw Error(ErrorKind::invalid_argument, "em_fit: empty data");
  for (double x : data)
    if (!std::isfinite(x))
      throw Error(ErrorKind::invalid_argument, "em_fit: non-finite data");
  if (count_distinct(data) < cfg.components) {
    std::ostringstream os;
    os << "em_fit: need at least " << cfg.components
       << " distinct values, got " << count_distinct(data);
    throw Error(ErrorKind::invalid_argument, os.str());
  }
}

}  // namespace

void EMConfig::validate() const {
  if (components < 1 || max_iter < 1 || !(tol > 0.0) || !(sigma_floor >= 1e-6))
    throw Error(ErrorKind::invalid_argument,
                "EMConfig requires components>=1, max_iter>=1, tol>0, "
                "sigma_floor>=1e-6");
}

double gmm_nll(const GMM& model, std::span<const double> data) {
  if (data.empty())
    throw Error(ErrorKind::invalid_argument, "gmm_nll: empty data");
  double nll = 0.0;
  for (double x : data) nll -= model.log_pdf(x);
  return nll;
}

EMResult em_fit(std::span<const double> data, const EMConfig& cfg) {
  check_data(data, cfg);
  return run_em(data, cfg, initial_params(data, cfg));
}

EMResult em_fit(std::span<const double> data, const EMConfig& cfg,
                const GMM& initial) {
  check_data(data, cfg);
  if (initial.size() != cfg.components)
    throw Error(ErrorKind::invalid_argument,
                "em_fit: initial mixture size differs from cfg.components");
  return run_em(data, cfg, from_gmm(initial));
}

EMResult fit_multidim(const Eigen::MatrixXd& data, const EMConfig& cfg) {
  EMResult out;
  out.converged = true;
  std::vector<double> column(static_cast<std::size_t>(data.rows()));
  for (long j = 0; j < data.cols(); ++j) {
    for (long i = 0; i < data.rows(); ++i)
      column[static_cast<std::size_t>(i)] = data(i, j);
    EMConfig dim_cfg = cfg;
    dim_cfg.seed = derive_seed(cfg.seed, "em-dim", static_cast<std::uint64_t>(j));
    EMResult r;
    try {
      r = em_fit(column, dim_cfg);
    } catch (const Error& e) {
      std::ostringstream os;
      os << "dimension " << j << ": " << e.what();
      throw Error(e.kind(), os.str());
    }
    out.model.push_back(std::move(r.model.front()));
    out.responsibilities.push_back(std::move(r.responsibilities.front()));
    out.nll_trace.push_back(std::move(r.nll_trace.front()));
    out.iters_per_dim.push_back(r.iters_used);
    out.iters_used = std::max(out.iters_used, r.iters_used);
    out.final_nll += r.final_nll;
    out.converged = out.converged && r.converged;
  }
  return out;
}

Eigen::MatrixXd responsibilities(const GMM& model,
                                 std::span<const double> data) {
  Eigen::MatrixXd resp;
  e_step(data, from_gmm(model), resp, nullptr);
  return resp;
}

SignedMixture make_reverse(const GMM& model, double target_offset,
                           double sigma_floor) {
  if (!std::isfinite(target_offset))
    throw Error(ErrorKind::invalid_argument, "make_reverse: non-finite offset");
  std::vector<SignedTerm> terms;
  for (const auto& c : model.components())
    terms.push_back({-c.weight, c.component});
  terms.push_back({1.0, Gaussian1D(target_offset, sigma_floor)});
  return SignedMixture(std::move(terms));
}

Json to_json(const EMResult& result) {
  Json j = Json::object();
  j["iters_used"] = result.iters_used;
  j["final_nll"] = result.final_nll;
  j["converged"] = result.converged;
  j["iters_per_dim"] = result.iters_per_dim;
  Json dims = Json::array();
  for (const auto& g : result.model) dims.push_back(g);
  j["dimensions"] = std::move(dims);
  return j;
}

}  // namespace revdist
