// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cdiff {

inline constexpr std::uint64_t kDefaultSeed = 2025;

/// Named seed derivation: every random stream is keyed by (global seed,
/// purpose, index) so streams never depend on consumption order elsewhere.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, purpose, index));
}

}  // namespace cdiff
