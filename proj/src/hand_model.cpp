#include "hop/hand_model.hpp"

#include <algorithm>
#include <cmath>

#include "hop/error.hpp"
#include "hop/kernels.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

namespace {

FingerConfig make_finger(std::string name, const Vec3& mcp, const Vec3& dir, double base_length,
                         const std::array<double, 4>& radii, const Vec3& palm_normal,
                         const Vec3& curl = Vec3::Zero()) {
  FingerConfig f;
  f.name = std::move(name);
  f.mcp_offset = mcp;
  f.direction = dir.normalized();
  const Vec3 curl_dir = curl.isZero() ? palm_normal : curl.normalized();
  f.flexion_axis = f.direction.cross(curl_dir).normalized();
  f.abduction_axis = palm_normal;
  f.segment_lengths = {base_length, 0.65 * base_length, 0.5 * base_length};
  f.radii = radii;
  return f;
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

}  // namespace

HandSkeleton HandSkeleton::canonical() {
  HandSkeleton s;
  s.wrist = Vec3(0.0, -0.07, 0.0);
  s.palm_normal = Vec3::UnitZ();
  const Vec3 n = s.palm_normal;
  // Thumb curls up and across the palm rather than straight up.
  s.fingers[0] = make_finger("thumb", {0.028, 0.022, 0.0}, {0.55, 0.83, 0.0}, 0.034,
                             {0.012, 0.0105, 0.0095, 0.0085}, n, Vec3(-0.45, 0.0, 0.9));
  s.fingers[1] = make_finger("index", {0.024, 0.088, 0.0}, {0.06, 1.0, 0.0}, 0.040,
                             {0.011, 0.0095, 0.0085, 0.0078}, n);
  s.fingers[2] = make_finger("middle", {0.006, 0.092, 0.0}, {0.0, 1.0, 0.0}, 0.044,
                             {0.011, 0.0095, 0.0085, 0.0078}, n);
  s.fingers[3] = make_finger("ring", {-0.012, 0.088, 0.0}, {-0.05, 1.0, 0.0}, 0.041,
                             {0.011, 0.009, 0.0082, 0.0075}, n);
  s.fingers[4] = make_finger("pinky", {-0.029, 0.080, 0.0}, {-0.12, 1.0, 0.0}, 0.033,
                             {0.010, 0.0082, 0.0075, 0.007}, n);
  return s;
}

void HandSkeleton::validate(double grid_half_extent) const {
  auto unit = [](const Vec3& v) { return v.allFinite() && std::abs(v.norm() - 1.0) <= 1e-9; };
  if (!unit(palm_normal)) fail(ErrorCode::InvalidConfig, "palm normal must be a unit vector");
  for (const auto& f : fingers) {
    if (!unit(f.direction) || !unit(f.flexion_axis) || !unit(f.abduction_axis))
      fail(ErrorCode::InvalidConfig, "finger '" + f.name + "': axes must be unit vectors");
    if (!(f.mcp_offset.norm() > 0.0)) fail(ErrorCode::InvalidConfig, "finger '" + f.name + "': palm bone length must be > 0");
    for (double l : f.segment_lengths)
      if (!(l > 0.0)) fail(ErrorCode::InvalidConfig, "finger '" + f.name + "': segment lengths must be > 0");
    for (double r : f.radii)
      if (!(r > 0.0)) fail(ErrorCode::InvalidConfig, "finger '" + f.name + "': capsule radii must be > 0");
  }
  if (!(limits.abduction_min <= limits.abduction_max && limits.flexion_min <= limits.flexion_max))
    fail(ErrorCode::InvalidConfig, "joint limit intervals are empty");
  const HandKinematics rest = pose_hand(*this, HandPose::zero());
  auto inside = [&](const Vec3& p) { return p.cwiseAbs().maxCoeff() < grid_half_extent; };
  for (const auto& j : rest.joints)
    if (!inside(j)) fail(ErrorCode::InvalidConfig, "rest pose joint lies outside the grid extent");
  for (const auto& t : rest.tips)
    if (!inside(t)) fail(ErrorCode::InvalidConfig, "rest pose fingertip lies outside the grid extent");
}

std::array<Vec3, kJoints> HandSkeleton::rest_joints() const { return forward_kinematics(*this, HandPose::zero()); }

std::array<int, kJoints> HandSkeleton::parents() {
  std::array<int, kJoints> p{};
  for (int f = 0; f < kFingers; ++f) {
    p[3 * f] = -1;
    p[3 * f + 1] = 3 * f;
    p[3 * f + 2] = 3 * f + 1;
  }
  return p;
}

std::array<double, kJoints> HandSkeleton::bone_lengths() const {
  std::array<double, kJoints> l{};
  for (int f = 0; f < kFingers; ++f) {
    l[3 * f] = fingers[f].mcp_offset.norm();
    l[3 * f + 1] = fingers[f].segment_lengths[0];
    l[3 * f + 2] = fingers[f].segment_lengths[1];
  }
  return l;
}

Vec3 HandSkeleton::palm_center() const {
  Vec3 mcp_mean = Vec3::Zero();
  for (int f = 1; f < kFingers; ++f) mcp_mean += fingers[f].mcp_offset;
  return wrist + 0.5 * (mcp_mean / (kFingers - 1));
}

HandPose HandPose::uniform_flexion(double angle) {
  HandPose p;
  for (int d = 0; d < kPoseDofs; ++d)
    if (!is_abduction(d)) p.theta[d] = angle;
  return p;
}

HandPose HandPose::clamped(const JointLimits& limits) const {
  HandPose out = *this;
  for (int d = 0; d < kPoseDofs; ++d)
    out.theta[d] = is_abduction(d) ? std::clamp(theta[d], limits.abduction_min, limits.abduction_max)
                                   : std::clamp(theta[d], limits.flexion_min, limits.flexion_max);
  return out;
}

bool HandPose::within(const JointLimits& limits, double tol) const {
  for (int d = 0; d < kPoseDofs; ++d) {
    const double lo = is_abduction(d) ? limits.abduction_min : limits.flexion_min;
    const double hi = is_abduction(d) ? limits.abduction_max : limits.flexion_max;
    if (!(theta[d] >= lo - tol && theta[d] <= hi + tol)) return false;
  }
  return true;
}

HandKinematics pose_hand(const HandSkeleton& s, const HandPose& pose) {
  HandKinematics k;
  for (int f = 0; f < kFingers; ++f) {
    const FingerConfig& fc = s.fingers[f];
    const int b = kDofsPerFinger * f;
    const Vec3 p0 = s.wrist + fc.mcp_offset;
    const Mat3 r0 = rotation_about(fc.abduction_axis, pose.theta[b]);
    const Mat3 r1 = r0 * rotation_about(fc.flexion_axis, pose.theta[b + 1]);
    const Mat3 r2 = r1 * rotation_about(fc.flexion_axis, pose.theta[b + 2]);
    const Mat3 r3 = r2 * rotation_about(fc.flexion_axis, pose.theta[b + 3]);
    const Vec3 p1 = p0 + r1 * (fc.segment_lengths[0] * fc.direction);
    const Vec3 p2 = p1 + r2 * (fc.segment_lengths[1] * fc.direction);
    const Vec3 tip = p2 + r3 * (fc.segment_lengths[2] * fc.direction);
    k.joints[3 * f] = p0;
    k.joints[3 * f + 1] = p1;
    k.joints[3 * f + 2] = p2;
    k.tips[f] = tip;
    k.segment_rotation[f] = {r1, r2, r3};
    k.dof_axis[b] = fc.abduction_axis;
    k.dof_axis[b + 1] = r0 * fc.flexion_axis;
    k.dof_axis[b + 2] = r1 * fc.flexion_axis;
    k.dof_axis[b + 3] = r2 * fc.flexion_axis;
    k.dof_pivot[b] = p0;
    k.dof_pivot[b + 1] = p0;
    k.dof_pivot[b + 2] = p1;
    k.dof_pivot[b + 3] = p2;
    const int bone = kBonesPerFinger * f;
    k.capsules[bone] = {s.wrist, p0, fc.radii[0]};
    k.capsules[bone + 1] = {p0, p1, fc.radii[1]};
    k.capsules[bone + 2] = {p1, p2, fc.radii[2]};
    k.capsules[bone + 3] = {p2, tip, fc.radii[3]};
  }
  return k;
}

Eigen::Matrix<double, 3, kPoseDofs> HandKinematics::point_jacobian(const Vec3& point, int bone) const {
  Eigen::Matrix<double, 3, kPoseDofs> j = Eigen::Matrix<double, 3, kPoseDofs>::Zero();
  const int f = bone / kBonesPerFinger;
  const int segment = bone % kBonesPerFinger;  // 0 = palm bone, not articulated
  for (int d = 0; d < segment + (segment > 0 ? 1 : 0); ++d) {
    const int dof = kDofsPerFinger * f + d;
    j.col(dof) = dof_axis[dof].cross(point - dof_pivot[dof]);
  }
  return j;
}

std::array<Vec3, kJoints> forward_kinematics(const HandSkeleton& skeleton, const HandPose& pose) {
  return pose_hand(skeleton, pose).joints;
}

JointJacobian fk_jacobian(const HandSkeleton& skeleton, const HandPose& pose) {
  const HandKinematics k = pose_hand(skeleton, pose);
  JointJacobian jac = JointJacobian::Zero();
  for (int f = 0; f < kFingers; ++f) {
    jac.block<3, kPoseDofs>(3 * (3 * f + 1), 0) = k.point_jacobian(k.joints[3 * f + 1], kBonesPerFinger * f + 1);
    jac.block<3, kPoseDofs>(3 * (3 * f + 2), 0) = k.point_jacobian(k.joints[3 * f + 2], kBonesPerFinger * f + 2);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Skeletal distance field

VoxelGrid skeletal_field_from_joints(std::span<const Vec3> joints, const GridSpec& spec) {
  require(joints.size() == kJoints, ErrorCode::ShapeMismatch, "skeletal field needs 15 joints");
  VoxelGrid field(spec, kJoints);
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  std::vector<double> dx2(nx);
  for (int c = 0; c < kJoints; ++c) {
    const Vec3 jn = joints[c] / spec.half_extent;
    for (int i = 0; i < nx; ++i) {
      const double d = spec.center_normalized(0, i) - jn.x();
      dx2[i] = d * d;
    }
    auto out = field.channel(c);
    for (int k = 0; k < nz; ++k) {
      const double dz = spec.center_normalized(2, k) - jn.z();
      for (int j = 0; j < ny; ++j) {
        const double dy = spec.center_normalized(1, j) - jn.y();
        kernels::clamped_offset_row(dx2, dy * dy + dz * dz, kSkeletalClamp,
                                    out.subspan(spec.index(0, j, k), static_cast<std::size_t>(nx)));
      }
    }
  }
  return field;
}

VoxelGrid skeletal_field(const HandSkeleton& skeleton, const HandPose& pose, const GridSpec& spec) {
  const auto joints = forward_kinematics(skeleton, pose);
  return skeletal_field_from_joints(joints, spec);
}

std::array<Vec3, kJoints> skeletal_field_vjp(std::span<const Vec3> joints, const GridSpec& spec,
                                             const VoxelGrid& upstream) {
  require(joints.size() == kJoints && upstream.channels() == kJoints && upstream.spec() == spec,
          ErrorCode::ShapeMismatch, "skeletal_field_vjp: shape mismatch");
  std::array<Vec3, kJoints> grad;
  for (int c = 0; c < kJoints; ++c) {
    const Vec3 jn = joints[c] / spec.half_extent;
    const auto g = upstream.channel(c);
    Vec3 acc = Vec3::Zero();
    for (int k = 0; k < spec.dims[2]; ++k)
      for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
          const double u = g[spec.index(i, j, k)];
          if (u == 0.0) continue;
          const Vec3 d = spec.center_normalized(i, j, k) - jn;
          if (d.squaredNorm() < kSkeletalClamp) acc -= 2.0 * u * d;
        }
    grad[c] = acc / spec.half_extent;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Capsule geometry

HandDistance hand_sdf_with_bone(const HandKinematics& kin, const Vec3& p) {
  HandDistance best{std::numeric_limits<double>::infinity(), -1};
  for (int b = 0; b < kBones; ++b) {
    const Capsule& c = kin.capsules[b];
    const double d = segment_distance(p, c.a, c.b) - c.radius;
    if (d < best.distance) best = {d, b};
  }
  return best;
}

double hand_sdf(const HandKinematics& kin, const Vec3& p) { return hand_sdf_with_bone(kin, p).distance; }

std::vector<double> hand_sdf(const HandSkeleton& skeleton, const HandPose& pose, std::span<const Vec3> points) {
  const HandKinematics kin = pose_hand(skeleton, pose);
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(hand_sdf(kin, p));
  return out;
}

std::vector<SurfaceSample> capsule_surface_samples(std::span<const Capsule> capsules, double density_per_cm2) {
  require(density_per_cm2 > 0.0, ErrorCode::InvalidArgument, "sample density must be positive");
  constexpr double kCm2 = 1e-4;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  std::vector<SurfaceSample> out;
  auto covered_by_other = [&](const Vec3& p, int self) {
    for (std::size_t b = 0; b < capsules.size(); ++b) {
      if (static_cast<int>(b) == self) continue;
      const Capsule& c = capsules[b];
      if (segment_distance(p, c.a, c.b) - c.radius < -1e-7) return true;
    }
    return false;
  };
  for (int b = 0; b < static_cast<int>(capsules.size()); ++b) {
    const Capsule& c = capsules[b];
    Vec3 axis = c.b - c.a;
    const double length = axis.norm();
    axis = length > 0 ? Vec3(axis / length) : Vec3::UnitZ();
    const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 u = axis.cross(helper).normalized();
    const Vec3 w = axis.cross(u);
    const double r = c.radius;

    const double cyl_area = 2.0 * M_PI * r * length;
    const int n_cyl = length > 0 ? std::max(1, static_cast<int>(std::lround(density_per_cm2 * cyl_area / kCm2))) : 0;
    for (int i = 0; i < n_cyl; ++i) {
      const double t = (i + 0.5) / n_cyl;
      const double phi = golden * i;
      const Vec3 p = c.a + t * length * axis + r * (std::cos(phi) * u + std::sin(phi) * w);
      if (!covered_by_other(p, b)) out.push_back({p, cyl_area / n_cyl, b});
    }
    const double cap_area = 4.0 * M_PI * r * r;
    const int n_cap = std::max(2, static_cast<int>(std::lround(density_per_cm2 * cap_area / kCm2)));
    for (int i = 0; i < n_cap; ++i) {
      // Fibonacci sphere; each direction belongs to the end cap it faces.
      const double zc = 1.0 - 2.0 * (i + 0.5) / n_cap;
      const double rho = std::sqrt(std::max(0.0, 1.0 - zc * zc));
      const double phi = golden * i;
      const Vec3 dir = rho * std::cos(phi) * u + rho * std::sin(phi) * w + zc * axis;
      const Vec3 p = (dir.dot(axis) < 0.0 ? c.a : c.b) + r * dir;
      if (!covered_by_other(p, b)) out.push_back({p, cap_area / n_cap, b});
    }
  }
  return out;
}

std::vector<SurfaceSample> hand_surface_samples(const HandKinematics& kin, double density_per_cm2) {
  return capsule_surface_samples(kin.capsules, density_per_cm2);
}

std::vector<SurfaceSample> hand_surface_samples(const HandSkeleton& skeleton, const HandPose& pose,
                                                double density_per_cm2) {
  return hand_surface_samples(pose_hand(skeleton, pose), density_per_cm2);
}

std::array<ContactPoint, kContactPoints> contact_points(const HandSkeleton& s, const HandKinematics& kin) {
  std::array<ContactPoint, kContactPoints> out;
  for (int f = 0; f < kFingers; ++f) {
    const FingerConfig& fc = s.fingers[f];
    const Vec3 curl = (kin.segment_rotation[f][2] * fc.flexion_axis.cross(fc.direction)).normalized();
    out[f] = {kin.tips[f] + fc.radii[3] * curl, kBonesPerFinger * f + 3};
  }
  // Palm anchors on the palm-side surface of the index, middle and ring palm bones.
  const std::array<std::pair<int, double>, 3> anchors = {{{1, 0.6}, {2, 0.25}, {3, 0.6}}};
  for (int a = 0; a < 3; ++a) {
    const auto [f, along] = anchors[a];
    const Vec3 p = s.wrist + along * s.fingers[f].mcp_offset + s.fingers[f].radii[0] * s.palm_normal;
    out[kFingers + a] = {p, kBonesPerFinger * f};
  }
  return out;
}

TriMesh hand_mesh(const HandKinematics& kin, int segments) {
  TriMesh mesh;
  for (const auto& c : kin.capsules) mesh.append(make_capsule_mesh(c.a, c.b, c.radius, segments));
  return mesh;
}

}  // namespace hop
