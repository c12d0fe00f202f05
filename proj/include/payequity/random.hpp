#pragma once

#include <cstdint>
#include <random>

namespace payequity {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a bijective mixer on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of independent stream `stream` under `base_seed`.
constexpr std::uint64_t derive_seed(std::uint64_t base_seed,
                                    std::uint64_t stream) {
  return splitmix64(base_seed ^ splitmix64(stream));
}

}  // namespace payequity
