#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace hop {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

Mat3 skew(const Vec3& v);

/// Exponential map so(3) -> SO(3). Uses the series expansion below 1e-6 rad.
Mat3 so3_exp(const Vec3& axis_angle);
Vec3 so3_log(const Mat3& rotation);

/// Left Jacobian of SO(3): exp(w + dw) ~= exp(J_l(w) dw) exp(w).
Mat3 so3_left_jacobian(const Vec3& axis_angle);

/// Rotation by `angle` about a unit axis.
Mat3 rotation_about(const Vec3& unit_axis, double angle);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

/// x = scale * R(rotation) * p + translation. Maps object coordinates into the
/// hand-centric frame when used as T_{o->h}.
struct RigidTransform {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  static RigidTransform identity() { return {}; }

  Mat3 rotation_matrix() const { return so3_exp(rotation); }
  Vec3 apply(const Vec3& p) const;
  Vec3 apply_inverse(const Vec3& x) const;
  RigidTransform inverse() const;
  /// (*this) o inner: first inner, then *this.
  RigidTransform compose(const RigidTransform& inner) const;
  bool is_finite() const;
};

}  // namespace hop
