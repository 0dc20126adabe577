#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace forgetlab::rng {

// SplitMix64 finalizer; every draw is a pure function of (seed, stream, index).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t key(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Uniform in (0, 1), never exactly 0 or 1.
inline double uniform(std::uint64_t k, std::uint64_t index) {
  return (static_cast<double>(mix64(k + mix64(index)) >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal; slot j of sample `index` (Box–Muller on a dedicated pair of uniforms).
inline double normal(std::uint64_t k, std::uint64_t index, std::uint64_t j) {
  const std::uint64_t base = (index << 8) + 2 * j;
  const double u1 = uniform(k, base);
  const double u2 = uniform(k, base + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace forgetlab::rng
