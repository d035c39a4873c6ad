#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace efld {

/// std::mt19937_64 output is fixed by the standard; the distributions below are
/// written out so that draws are identical on every platform.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer in [0, n).
inline std::uint64_t below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard normal via Box-Muller (one draw per call).
inline double normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Mixes two values into one seed (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace efld
