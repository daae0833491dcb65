#include "epn/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace epn {

UnitQuaternion UnitQuaternion::normalized(double w, double x, double y, double z) {
  if (!std::isfinite(w) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
    throw Error("quaternion has non-finite components");
  }
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n == 0.0) throw Error("cannot normalize a zero quaternion");
  const double s = (w < 0.0 ? -1.0 : 1.0) / n;
  return UnitQuaternion{w * s, x * s, y * s, z * s};
}

UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
  return UnitQuaternion{a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
                        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

UnitQuaternion conjugate(const UnitQuaternion& q) { return {q.w, -q.x, -q.y, -q.z}; }

Mat3 rotation_from_quaternion(const UnitQuaternion& q) {
  if (!std::isfinite(q.w) || !std::isfinite(q.x) || !std::isfinite(q.y) || !std::isfinite(q.z)) {
    throw Error("rotation_from_quaternion: non-finite input");
  }
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

UnitQuaternion quaternion_from_rotation(const Mat3& r) {
  if (!is_finite(r)) throw Error("quaternion_from_rotation: non-finite input");
  const double tr = r.trace();
  double w, x, y, z;
  if (tr > 0.0) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    w = 0.25 * s;
    x = (r(2, 1) - r(1, 2)) / s;
    y = (r(0, 2) - r(2, 0)) / s;
    z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    w = (r(2, 1) - r(1, 2)) / s;
    x = 0.25 * s;
    y = (r(0, 1) + r(1, 0)) / s;
    z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    w = (r(0, 2) - r(2, 0)) / s;
    x = (r(0, 1) + r(1, 0)) / s;
    y = 0.25 * s;
    z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    w = (r(1, 0) - r(0, 1)) / s;
    x = (r(0, 2) + r(2, 0)) / s;
    y = (r(1, 2) + r(2, 1)) / s;
    z = 0.25 * s;
  }
  return UnitQuaternion::normalized(w, x, y, z);
}

Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  const double n = axis.norm();
  if (!(n > 0.0) || !std::isfinite(angle_rad)) throw Error("axis_angle: degenerate axis or angle");
  const Vec3 u = axis / n;
  const double h = 0.5 * angle_rad;
  const double s = std::sin(h);
  // Sign canonicalization is irrelevant here: R(q) == R(-q).
  return rotation_from_quaternion(UnitQuaternion{std::cos(h), u.x() * s, u.y() * s, u.z() * s});
}

namespace {

// arccos((tr M - 1) / 2) evaluated as atan2(sin, cos), which stays accurate near 0 and 180 degrees.
double relative_angle(const Mat3& m) {
  const double c = 0.5 * (m.trace() - 1.0);
  const double s = 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)).norm();
  return std::atan2(s, c);
}

}  // namespace

double angular_distance(const Mat3& a, const Mat3& b) {
  const Mat3 m = a.transpose() * b;
  const double c = 0.5 * (m.trace() - 1.0);
  if (!std::isfinite(c) || c > 1.0 + 1e-9 || c < -1.0 - 1e-9) {
    throw Error("angular_distance: inputs are not rotation matrices");
  }
  return std::clamp(relative_angle(m), 0.0, std::numbers::pi) * 180.0 / std::numbers::pi;
}

double angular_distance_rad_unchecked(const Mat3& a, const Mat3& b) { return relative_angle(a.transpose() * b); }

double orthogonality_defect(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Mat3 orthonormalize(const Mat3& r) {
  Vec3 r0 = r.row(0).transpose();
  Vec3 r1 = r.row(1).transpose();
  r0.normalize();
  r1 -= r0.dot(r1) * r0;
  r1.normalize();
  const Vec3 r2 = r0.cross(r1);
  Mat3 out;
  out.row(0) = r0.transpose();
  out.row(1) = r1.transpose();
  out.row(2) = r2.transpose();
  return out;
}

bool is_finite(const Vec3& v) { return v.allFinite(); }
bool is_finite(const Mat3& m) { return m.allFinite(); }

}  // namespace epn
