#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace whatif {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms and runs, unlike std::hash.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for a named component, derived from the run's global seed.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view component,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ stable_hash(component)) + index);
}

inline Rng make_rng(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
  return Rng(substream_seed(seed, component, index));
}

/// Uniform real in [0, 1) from the top 53 bits; identical on every standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection; avoids implementation-defined distributions.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace whatif

namespace whatif {

/// Standard normal draw via Box-Muller, one value per call.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace whatif
