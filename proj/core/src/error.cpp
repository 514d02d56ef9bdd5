#include "revdist/error.hpp"

namespace revdist {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::usage: return "usage";
    case ErrorKind::data_not_found: return "data-not-found";
    case ErrorKind::parse: return "parse";
    case ErrorKind::schema: return "schema";
    case ErrorKind::wrong_magic: return "wrong-magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::count_mismatch: return "count-mismatch";
    case ErrorKind::structural: return "structural";
    case ErrorKind::estimator_degenerate: return "estimator-degenerate";
    case ErrorKind::degenerate_fit: return "degenerate-fit";
    case ErrorKind::training_diverged: return "training-diverged";
    case ErrorKind::degenerate_metric: return "degenerate-metric";
    case ErrorKind::stealth_violated: return "stealth-violated";
    case ErrorKind::branch_undertrained: return "branch-undertrained";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::stealth_violated: return 3;
    case ErrorKind::branch_undertrained: return 4;
    case ErrorKind::estimator_degenerate:
    case ErrorKind::degenerate_fit:
    case ErrorKind::training_diverged:
    case ErrorKind::degenerate_metric: return 5;
    default: return 2;
  }
}

}  // namespace revdist
