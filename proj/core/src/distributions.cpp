#include "revdist/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "revdist/error.hpp"

namespace revdist {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // ½ ln(2π)

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

Gaussian1D::Gaussian1D(double mu, double sigma) : mu_(mu), sigma_(sigma) {
  if (!std::isfinite(mu) || !std::isfinite(sigma) || sigma < 0.0) {
    std::ostringstream os;
    os << "Gaussian1D requires finite mu and sigma >= 0, got mu=" << mu
       << " sigma=" << sigma;
    throw Error(ErrorKind::invalid_argument, os.str());
  }
  sigma_ = std::max(sigma, kSigmaFloor);
}

double Gaussian1D::log_pdf(double x) const noexcept {
  const double z = (x - mu_) / sigma_;
  return -0.5 * z * z - std::log(sigma_) - kLogSqrt2Pi;
}

double Gaussian1D::pdf(double x) const noexcept { return std::exp(log_pdf(x)); }

double Gaussian1D::sample(Rng& rng) const {
  std::normal_distribution<double> n01(0.0, 1.0);
  return mu_ + sigma_ * n01(rng);
}

double gaussian_kl(const Gaussian1D& p, const Gaussian1D& q) noexcept {
  const double dm = p.mu() - q.mu();
  return std::log(q.sigma() / p.sigma()) +
         (p.variance() + dm * dm) / (2.0 * q.variance()) - 0.5;
}

GMM::GMM(std::vector<MixtureComponent> components)
    : components_(std::move(components)) {
  if (components_.empty())
    throw Error(ErrorKind::invalid_argument, "GMM needs at least one component");
  double total = 0.0;
  for (const auto& c : components_) {
    if (!(c.weight > 0.0 && c.weight <= 1.0)) {
      std::ostringstream os;
      os << "GMM weight outside (0, 1]: " << c.weight;
      throw Error(ErrorKind::invalid_argument, os.str());
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os.precision(17);
    os << "GMM weights sum to " << total << ", expected 1";
    throw Error(ErrorKind::invalid_argument, os.str());
  }
}

GMM::GMM(const Gaussian1D& single) : components_{{1.0, single}} {}

double GMM::log_pdf(double x) const noexcept {
  if (components_.size() == 1) return components_.front().component.log_pdf(x);
  std::vector<double> terms;
  terms.reserve(components_.size());
  for (const auto& c : components_)
    terms.push_back(std::log(c.weight) + c.component.log_pdf(x));
  return log_sum_exp(terms);
}

double GMM::pdf(double x) const noexcept { return std::exp(log_pdf(x)); }

double GMM::mean() const noexcept {
  double m = 0.0;
  for (const auto& c : components_) m += c.weight * c.component.mu();
  return m;
}

double GMM::variance() const noexcept {
  double second = 0.0;
  for (const auto& c : components_) {
    const double mu = c.component.mu();
    second += c.weight * (c.component.variance() + mu * mu);
  }
  const double m = mean();
  return std::max(second - m * m, 0.0);
}

double GMM::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double u = u01(rng);
  const MixtureComponent* chosen = &components_.back();
  for (const auto& c : components_) {
    if (u < c.weight) {
      chosen = &c;
      break;
    }
    u -= c.weight;
  }
  return chosen->component.sample(rng);
}

double log_pdf(const GMM& d, double x) noexcept { return d.log_pdf(x); }

double sample(const GMM& d, std::uint64_t seed) {
  Rng rng(seed);
  return d.sample(rng);
}

std::vector<double> sample_n(const GMM& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = d.sample(rng);
  return out;
}

SignedMixture::SignedMixture(std::vector<SignedTerm> terms)
    : terms_(std::move(terms)) {
  for (const auto& t : terms_)
    if (!std::isfinite(t.coefficient))
      throw Error(ErrorKind::invalid_argument,
                  "SignedMixture coefficients must be finite");
}

double SignedMixture::density(double x) const noexcept {
  double s = 0.0;
  for (const auto& t : terms_) s += t.coefficient * t.component.pdf(x);
  return s;
}

double SignedMixture::coefficient_sum() const noexcept {
  double s = 0.0;
  for (const auto& t : terms_) s += t.coefficient;
  return s;
}

double SignedMixture::signed_mean() const noexcept {
  double s = 0.0;
  for (const auto& t : terms_) s += t.coefficient * t.component.mu();
  return s;
}

Gaussian1D SignedMixture::gaussianize() const {
  // Variance of each sign group as a normalized mixture, scaled by its mass.
  double variance = 0.0;
  for (int sign : {+1, -1}) {
    double mass = 0.0, first = 0.0, second = 0.0;
    for (const auto& t : terms_) {
      if ((t.coefficient > 0.0) != (sign > 0) || t.coefficient == 0.0) continue;
      const double w = std::abs(t.coefficient);
      const double mu = t.component.mu();
      mass += w;
      first += w * mu;
      second += w * (t.component.variance() + mu * mu);
    }
    if (mass == 0.0) continue;
    const double m = first / mass;
    variance += mass * std::max(second / mass - m * m, 0.0);
  }
  return {signed_mean(), std::sqrt(variance)};
}

KlEstimate mixture_kl_mc(const GMM& p, const GMM& q, std::size_t n_samples,
                         std::uint64_t seed) {
  if (n_samples < 1000)
    throw Error(ErrorKind::invalid_argument,
                "mixture_kl_mc needs n_samples >= 1000");
  Rng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x = p.sample(rng);
    const double r = p.log_pdf(x) - q.log_pdf(x);
    if (!std::isfinite(r)) {
      std::ostringstream os;
      os.precision(17);
      os << "non-finite log-ratio at sample x=" << x;
      throw Error(ErrorKind::estimator_degenerate, os.str());
    }
    sum += r;
    sum_sq += r * r;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(sum_sq / n - mean * mean, 0.0) * n / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

void to_json(Json& j, const Gaussian1D& g) {
  j = Json::object();
  j["mu"] = g.mu();
  j["sigma"] = g.sigma();
}

void to_json(Json& j, const GMM& g) {
  Json comps = Json::array();
  for (const auto& c : g.components()) {
    Json e = Json::object();
    e["weight"] = c.weight;
    e["mu"] = c.component.mu();
    e["sigma"] = c.component.sigma();
    comps.push_back(std::move(e));
  }
  j = Json::object();
  j["components"] = std::move(comps);
}

GMM gmm_from_json(const Json& j) {
  std::vector<MixtureComponent> comps;
  for (const auto& e : j.at("components"))
    comps.push_back({e.at("weight").get<double>(),
                     Gaussian1D(e.at("mu").get<double>(),
                                e.at("sigma").get<double>())});
  return GMM(std::move(comps));
}

void to_json(Json& j, const SignedMixture& m) {
  Json terms = Json::array();
  for (const auto& t : m.terms()) {
    Json e = Json::object();
    e["coefficient"] = t.coefficient;
    e["mu"] = t.component.mu();
    e["sigma"] = t.component.sigma();
    terms.push_back(std::move(e));
  }
  j = Json::object();
  j["terms"] = std::move(terms);
}

}  // namespace revdist
