#include "epn/random.hpp"

#include <cmath>
#include <numbers>

namespace epn {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Mat3 Rng::rotation() {
  for (;;) {
    const double w = normal(), x = normal(), y = normal(), z = normal();
    if (w * w + x * x + y * y + z * z > 1e-12) {
      return rotation_from_quaternion(UnitQuaternion::normalized(w, x, y, z));
    }
  }
}

Vec3 Rng::in_unit_ball() {
  for (;;) {
    const Vec3 p(uniform(-1.0, 1.0), uniform(-1.0, 1.0), uniform(-1.0, 1.0));
    if (p.squaredNorm() <= 1.0) return p;
  }
}

}  // namespace epn
