#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>

namespace proxvr {

/// Seeded random source with a fully specified output stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The distributions are implemented here rather than taken from
/// <random> because the standard leaves those implementation-defined:
///
///   uniform01   ((w >> 11) + 0.5) * 2^-53, always in the open interval (0, 1)
///   normal      Box-Muller on two uniform01 draws; the sine branch is cached
///               and returned by the next call
///   index(m)    rejection sampling on raw 64-bit words, no modulo bias
///
/// Any implementation reproducing these three rules reproduces every instance
/// and every sampled index sequence in this project.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, m).
  std::uint64_t index(std::uint64_t m) {
    if (m == 0) throw std::invalid_argument("Rng::index: empty range");
    // Largest multiple of m representable in 64 bits; words at or above it are rejected.
    const std::uint64_t limit = m * (UINT64_MAX / m);
    std::uint64_t w = engine_();
    while (w >= limit) w = engine_();
    return w % m;
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace proxvr
