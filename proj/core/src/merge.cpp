#include "revdist/merge.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "revdist/error.hpp"

namespace revdist {

Gaussian1D barycenter(std::span<const Gaussian1D> inputs) {
  if (inputs.empty())
    throw Error(ErrorKind::invalid_argument, "barycenter: no inputs");
  const double n = static_cast<double>(inputs.size());
  double mean = 0.0;
  for (const auto& g : inputs) mean += g.mu();
  mean /= n;
  // Centered form of E[σ² + μ²] − μ̄², which avoids cancellation.
  double var = 0.0;
  for (const auto& g : inputs) {
    const double d = g.mu() - mean;
    var += g.variance() + d * d;
  }
  var /= n;
  return {mean, std::sqrt(std::max(var, 0.0))};
}

MergeResult merge_sum(std::span<const Gaussian1D> inputs) {
  const Gaussian1D bary = barycenter(inputs);
  const double n = static_cast<double>(inputs.size());
  double mu_sum = 0.0, var_sum = 0.0;
  for (const auto& g : inputs) {
    mu_sum += g.mu();
    var_sum += g.variance();
  }
  return MergeResult{
      bary,
      Gaussian1D(mu_sum, n * bary.sigma()),
      Gaussian1D(mu_sum, std::sqrt(var_sum)),
      inputs.size(),
  };
}

std::vector<Gaussian1D> merge_edge_sets(std::span<const Gaussian1D> benign,
                                        std::span<const Gaussian1D> malicious) {
  if (benign.size() != malicious.size()) {
    std::ostringstream os;
    os << "merge_edge_sets: benign has " << benign.size()
       << " edges, malicious has " << malicious.size();
    throw Error(ErrorKind::structural, os.str());
  }
  std::vector<Gaussian1D> out;
  out.reserve(benign.size());
  for (std::size_t i = 0; i < benign.size(); ++i) {
    const Gaussian1D pair[2] = {benign[i], malicious[i]};
    out.push_back(merge_sum(pair).merged_scaled);
  }
  return out;
}

Json to_json(const MergeResult& r) {
  Json j = Json::object();
  j["barycenter"] = r.barycenter;
  j["merged_scaled"] = r.merged_scaled;
  j["exact_sum"] = r.exact_sum;
  j["n_inputs"] = r.n_inputs;
  return j;
}

}  // namespace revdist
