#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <random>
#include <string_view>

namespace gsteg {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent named stream derived from a root seed ("init", "shuffle",
/// "synth", "dropout", ...). An optional index separates per-item streams.
inline Rng substream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(root_seed ^ splitmix64(hash_name(name)) ^ splitmix64(index + 1));
  return Rng(s);
}

// The std distributions are implementation-defined; these are not, so
// seeded streams agree across standard libraries.

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double standard_normal(Rng& rng) {
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform01(rng);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    std::uint64_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace gsteg
