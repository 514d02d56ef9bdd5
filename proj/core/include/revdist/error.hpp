#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace revdist {

/// Failure categories surfaced by the library. Each maps onto one CLI exit
/// code (see exit_code()).
enum class ErrorKind {
  invalid_argument,
  usage,
  data_not_found,
  parse,
  schema,
  wrong_magic,
  truncated,
  count_mismatch,
  structural,
  estimator_degenerate,
  degenerate_fit,
  training_diverged,
  degenerate_metric,
  stealth_violated,
  branch_undertrained,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// 2 = usage/input, 3 = stealth violated, 4 = undertrained, 5 = numeric.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace revdist
