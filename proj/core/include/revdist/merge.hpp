#pragma once

// Averaging Gaussians under inclusive KL and the N·P_θ merge rule used to fold
// one set of edge distributions into another.

#include <span>
#include <vector>

#include "revdist/distributions.hpp"
#include "revdist/json.hpp"

namespace revdist {

struct MergeResult {
  Gaussian1D barycenter;
  /// N·P_θ: the barycenter variable scaled by N (mean and std both ×N).
  Gaussian1D merged_scaled;
  /// Distribution of the sum of independent inputs, N(Σμ, √Σσ²).
  Gaussian1D exact_sum;
  std::size_t n_inputs;
};

/// argmin over Gaussians P of Σ_i KL(P_i || P), i.e. moment matching:
/// μ = mean of μ_i, σ² = mean of (σ_i² + μ_i²) − μ².
Gaussian1D barycenter(std::span<const Gaussian1D> inputs);

MergeResult merge_sum(std::span<const Gaussian1D> inputs);

/// Pairwise merge_sum(benign_i, malicious_i), returning merged_scaled.
/// Throws Error(structural) on length mismatch.
std::vector<Gaussian1D> merge_edge_sets(std::span<const Gaussian1D> benign,
                                        std::span<const Gaussian1D> malicious);

Json to_json(const MergeResult& r);

}  // namespace revdist
