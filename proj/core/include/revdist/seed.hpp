#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace revdist {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a master seed, a role tag and an
/// index: splitmix64(master ^ splitmix64(fnv1a64(role) + index)).
/// Every random stream in the project is obtained this way so that a single
/// configured seed reproduces a whole run.
std::uint64_t derive_seed(std::uint64_t master, std::string_view role,
                          std::uint64_t index = 0) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

inline Rng make_rng(std::uint64_t master, std::string_view role,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(master, role, index));
}

}  // namespace revdist
