#include "hop/math.hpp"

#include <algorithm>
#include <cmath>

namespace hop {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-6) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& r) {
  const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-6) return 0.5 * vee;
  if (M_PI - theta < 1e-4) {
    // Near pi the antisymmetric part vanishes; recover the axis from R + I.
    const Mat3 b = 0.5 * (r + Mat3::Identity());
    int col = 0;
    b.diagonal().maxCoeff(&col);
    Vec3 axis = b.col(col) / std::sqrt(std::max(b(col, col), 1e-300));
    axis.normalize();
    if (axis.dot(vee) < 0.0) axis = -axis;
    return theta * axis;
  }
  return theta / (2.0 * std::sin(theta)) * vee;
}

Mat3 so3_left_jacobian(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-6) return Mat3::Identity() + 0.5 * k + k * k / 6.0;
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * k +
         (theta - std::sin(theta)) / (t2 * theta) * k * k;
}

Mat3 rotation_about(const Vec3& unit_axis, double angle) {
  return so3_exp(unit_axis * angle);
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return so3_log(a.transpose() * b).norm();
}

Vec3 RigidTransform::apply(const Vec3& p) const {
  return scale * (rotation_matrix() * p) + translation;
}

Vec3 RigidTransform::apply_inverse(const Vec3& x) const {
  return rotation_matrix().transpose() * (x - translation) / scale;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  const Mat3 rt = rotation_matrix().transpose();
  inv.rotation = so3_log(rt);
  inv.scale = 1.0 / scale;
  inv.translation = -(rt * translation) / scale;
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  RigidTransform out;
  const Mat3 r = rotation_matrix();
  out.rotation = so3_log(r * inner.rotation_matrix());
  out.scale = scale * inner.scale;
  out.translation = scale * (r * inner.translation) + translation;
  return out;
}

bool RigidTransform::is_finite() const {
  return rotation.allFinite() && translation.allFinite() && std::isfinite(scale) && scale > 0.0;
}

}  // namespace hop
