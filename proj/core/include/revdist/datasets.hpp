#pragma once

// IRIS (CSV) and MNIST (IDX) ingestion, splitting, triggers and poisoning.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "revdist/json.hpp"

namespace revdist {

struct Dataset {
  /// n × d, each feature in [0, 1].
  Eigen::MatrixXd features;
  std::vector<int> labels;
  std::size_t n_classes = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept {
    return static_cast<std::size_t>(features.cols());
  }
  /// Throws Error(schema) when labels are out of range, features are NaN or
  /// the row count disagrees with the label count.
  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;
  /// First `n` rows (or all rows when n >= size()).
  Dataset head(std::size_t n) const;
};

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Parses `f1,f2,f3,f4,classname` rows. A leading non-numeric header row is
/// skipped. Features are min-max normalized per column; zero-span columns
/// become 0.
Dataset load_iris(const std::filesystem::path& path);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255.
Dataset load_mnist(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path);

/// Per-column min-max normalization to [0, 1]; zero-span columns map to 0.
Eigen::MatrixXd normalize_min_max(const Eigen::MatrixXd& features);

/// Seeded shuffle then split; the test part gets round(test_fraction · n)
/// rows.
TrainTestSplit split_train_test(const Dataset& ds, double test_fraction,
                                std::uint64_t seed);

enum class TriggerMode { blend, patch };

struct TriggerSpec {
  Eigen::VectorXd pattern;
  /// ρ ∈ [0, 1]: blend coefficient, or the covered fraction in patch mode.
  double noise_ratio = 0.0;
  int target_label = 0;
  TriggerMode mode = TriggerMode::blend;
  std::uint64_t seed = 0;

  /// Pattern drawn uniformly from [0, 1]^dim using `seed`.
  static TriggerSpec random(std::size_t dim, double noise_ratio,
                            int target_label, TriggerMode mode,
                            std::uint64_t seed);
  TriggerSpec with_noise_ratio(double rho) const;
  void validate(std::size_t dim) const;
};

/// Among `candidates` random patterns seeded by derive_seed(seed,
/// "trigger-candidate", i), returns the one whose triggered non-target rows
/// (at `noise_ratio`) lie farthest from the clean rows, scored by the 10th
/// percentile of nearest-clean-row distance. At most `max_rows` rows of each
/// set enter the score. candidates = 1 returns TriggerSpec::random(…, seed).
TriggerSpec select_trigger(const Dataset& ds, double noise_ratio, int target_label,
                           TriggerMode mode, std::uint64_t seed,
                           std::size_t candidates, std::size_t max_rows = 500);

Eigen::VectorXd apply_trigger(const Eigen::VectorXd& x, const TriggerSpec& t);
/// apply_trigger on every row.
Eigen::MatrixXd apply_trigger_rows(const Eigen::MatrixXd& x,
                                   const TriggerSpec& t);

/// Sorted indices of the ⌈fraction · n⌉ rows chosen for poisoning.
std::vector<std::size_t> poison_indices(std::size_t n, double fraction,
                                        std::uint64_t seed);

/// Triggers the chosen rows and relabels them to t.target_label.
Dataset poison(const Dataset& ds, const TriggerSpec& t, double fraction);

Json to_json(const Dataset& ds);
Dataset dataset_from_json(const Json& j);
Json to_json(const TriggerSpec& t);
TriggerSpec trigger_from_json(const Json& j);

std::string_view to_string(TriggerMode mode) noexcept;
TriggerMode trigger_mode_from_string(std::string_view s);

}  // namespace revdist
