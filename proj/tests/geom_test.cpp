#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "epn/geom.hpp"
#include "epn/random.hpp"

namespace epn {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Rotation angle from the quaternion logarithm: 2 atan2(|v|, |w|).
double quaternion_log_angle_deg(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())) / kDeg;
}

TEST(AngularDistance, IdenticalRotationsAreZero) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Mat3 r = rng.rotation();
    EXPECT_NEAR(angular_distance(r, r), 0.0, 1e-6);
  }
}

TEST(AngularDistance, QuarterTurn) {
  EXPECT_NEAR(angular_distance(Mat3::Identity(), axis_angle(Vec3::UnitZ(), 90.0 * kDeg)), 90.0, 1e-12);
}

TEST(AngularDistance, ComposedRotationMatchesQuaternionLog) {
  const Mat3 r = axis_angle(Vec3::UnitY(), 40.0 * kDeg) * axis_angle(Vec3::UnitX(), 30.0 * kDeg);
  const double oracle = quaternion_log_angle_deg(r);
  EXPECT_NEAR(angular_distance(Mat3::Identity(), r), oracle, 1e-9);
  EXPECT_NEAR(oracle, 49.62843380918455, 1e-9);
}

TEST(AngularDistance, HalfTurnClampsToOneEighty) {
  EXPECT_NEAR(angular_distance(Mat3::Identity(), axis_angle(Vec3(1, 1, 0), std::numbers::pi)), 180.0, 1e-6);
}

TEST(AngularDistance, RejectsNonRotations) {
  EXPECT_THROW(angular_distance(Mat3::Identity(), 2.0 * Mat3::Identity()), Error);
}

TEST(AngularDistance, SymmetricAndBiInvariant) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Mat3 a = rng.rotation(), b = rng.rotation(), q = rng.rotation();
    const double d = angular_distance(a, b);
    EXPECT_NEAR(angular_distance(b, a), d, 1e-9);
    EXPECT_NEAR(angular_distance(q * a, q * b), d, 1e-9);
    EXPECT_NEAR(angular_distance(a * q, b * q), d, 1e-9);
  }
}

TEST(Quaternion, RoundTripUpToSign) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto q = UnitQuaternion::normalized(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const auto back = quaternion_from_rotation(rotation_from_quaternion(q));
    const double s = (q.w * back.w + q.x * back.x + q.y * back.y + q.z * back.z) < 0 ? -1.0 : 1.0;
    EXPECT_NEAR(s * back.w, q.w, 1e-12);
    EXPECT_NEAR(s * back.x, q.x, 1e-12);
    EXPECT_NEAR(s * back.y, q.y, 1e-12);
    EXPECT_NEAR(s * back.z, q.z, 1e-12);
  }
}

TEST(Quaternion, MatrixRoundTrip) {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const Mat3 r = rng.rotation();
    EXPECT_LT((rotation_from_quaternion(quaternion_from_rotation(r)) - r).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Quaternion, ProductMatchesMatrixProduct) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto a = quaternion_from_rotation(rng.rotation());
    const auto b = quaternion_from_rotation(rng.rotation());
    const Mat3 lhs = rotation_from_quaternion(a * b);
    const Mat3 rhs = rotation_from_quaternion(a) * rotation_from_quaternion(b);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((rotation_from_quaternion(conjugate(a)) - rotation_from_quaternion(a).transpose()).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(Quaternion, NormalizedRejectsZero) {
  EXPECT_THROW(UnitQuaternion::normalized(0, 0, 0, 0), Error);
  EXPECT_THROW(UnitQuaternion::normalized(NAN, 0, 0, 0), Error);
  const auto q = UnitQuaternion::normalized(-2, 0, 0, 0);
  EXPECT_EQ(q.w, 1.0);
}

TEST(Orthonormalize, RepairsDrift) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    Mat3 r = rng.rotation();
    r += 1e-7 * Mat3::Random();
    const Mat3 fixed = orthonormalize(r);
    EXPECT_LT(orthogonality_defect(fixed), 1e-14);
    EXPECT_GT(fixed.determinant(), 0.0);
    EXPECT_LT((fixed - r).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Rng, RotationsAreProper) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = rng.rotation();
    EXPECT_LT(orthogonality_defect(r), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(Rng, StreamIsReproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

}  // namespace
}  // namespace epn
