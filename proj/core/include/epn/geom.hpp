#pragma once

#include <array>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace epn {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Thrown for invalid arguments to any epn routine (bad shapes, non-finite input, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unit quaternion (w, x, y, z), canonicalized to w >= 0.
struct UnitQuaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  /// Normalizes and flips sign so that w >= 0. Throws on zero or non-finite input.
  static UnitQuaternion normalized(double w, double x, double y, double z);

  std::array<double, 4> as_array() const { return {w, x, y, z}; }
};

UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b);
UnitQuaternion conjugate(const UnitQuaternion& q);

/// Rotation matrix of q. R(q) == R(-q).
Mat3 rotation_from_quaternion(const UnitQuaternion& q);

/// Inverse of rotation_from_quaternion (Shepperd's method), canonical sign.
UnitQuaternion quaternion_from_rotation(const Mat3& r);

/// Rotation of `angle_rad` about `axis` (axis need not be unit length).
Mat3 axis_angle(const Vec3& axis, double angle_rad);

/// Geodesic distance arccos((tr(R1^T R2) - 1) / 2) in degrees, in [0, 180].
/// The trace argument is clamped to [-1, 1] when it overshoots by at most 1e-9;
/// larger overshoot means the inputs are not rotations and throws.
double angular_distance(const Mat3& a, const Mat3& b);

/// Same metric in radians, without the validity check; used in hot loops.
double angular_distance_rad_unchecked(const Mat3& a, const Mat3& b);

/// Max-abs deviation of R^T R from I.
double orthogonality_defect(const Mat3& r);

/// Re-orthonormalize by Gram-Schmidt on rows, keeping a right-handed frame.
Mat3 orthonormalize(const Mat3& r);

bool is_finite(const Vec3& v);
bool is_finite(const Mat3& m);

}  // namespace epn
