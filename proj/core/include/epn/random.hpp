#pragma once

#include <cstdint>
#include <random>

#include "epn/geom.hpp"

namespace epn {

/// Seeded generator with platform-independent output.
///
/// std::uniform_real_distribution and std::normal_distribution are
/// implementation-defined, so draws are derived directly from the raw
/// mt19937_64 stream. Frozen regression values depend on this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  /// Standard normal (Box-Muller, one draw per call).
  double normal();

  /// Haar-uniform random rotation.
  Mat3 rotation();

  /// Uniform point inside the unit ball (rejection).
  Vec3 in_unit_ball();

 private:
  std::mt19937_64 engine_;
};

}  // namespace epn
