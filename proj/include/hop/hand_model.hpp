#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hop/grid.hpp"
#include "hop/math.hpp"

namespace hop {

inline constexpr int kFingers = 5;
inline constexpr int kJointsPerFinger = 3;  // MCP, PIP, DIP
inline constexpr int kJoints = kFingers * kJointsPerFinger;
inline constexpr int kDofsPerFinger = 4;  // abduction, MCP/PIP/DIP flexion
inline constexpr int kPoseDofs = kFingers * kDofsPerFinger;
inline constexpr int kBonesPerFinger = 4;  // palm, proximal, middle, distal
inline constexpr int kBones = kFingers * kBonesPerFinger;
inline constexpr int kContactPoints = 8;  // 5 fingertip pads + 3 palm anchors

/// Skeletal channels store squared normalized distance clamped to this value.
inline constexpr double kSkeletalClamp = 4.0;

using PoseVector = Eigen::Matrix<double, kPoseDofs, 1>;
using JointJacobian = Eigen::Matrix<double, 3 * kJoints, kPoseDofs>;

struct JointLimits {
  double abduction_min = -0.5;
  double abduction_max = 0.5;
  double flexion_min = -0.2;
  double flexion_max = 1.8;
};

/// One kinematic chain. Joints: MCP (fixed on the palm), PIP, DIP; the distal
/// segment ends at the fingertip, which is not a field channel.
struct FingerConfig {
  std::string name;
  Vec3 mcp_offset = Vec3::Zero();  ///< from the wrist, meters
  Vec3 direction = Vec3::UnitY();  ///< rest direction of all three segments
  Vec3 flexion_axis = Vec3::UnitX();
  Vec3 abduction_axis = Vec3::UnitZ();
  std::array<double, 3> segment_lengths{};  ///< proximal, middle, distal (m)
  std::array<double, 4> radii{};            ///< palm bone, proximal, middle, distal (m)
};

struct HandSkeleton {
  Vec3 wrist = Vec3::Zero();
  Vec3 palm_normal = Vec3::UnitZ();
  std::array<FingerConfig, kFingers> fingers;
  JointLimits limits;

  /// Procedural right hand, palm facing +z, fingers along +y, thumb on +x.
  static HandSkeleton canonical();

  /// Throws InvalidConfig when an invariant does not hold.
  void validate(double grid_half_extent = 0.15) const;

  std::array<Vec3, kJoints> rest_joints() const;
  /// Parent of each joint; -1 is the wrist root.
  static std::array<int, kJoints> parents();
  /// Distance of each joint from its parent (wrist for MCP joints).
  std::array<double, kJoints> bone_lengths() const;
  double bone_radius(int bone) const { return fingers[bone / kBonesPerFinger].radii[bone % kBonesPerFinger]; }
  Vec3 palm_center() const;
};

/// 20 articulation angles, finger-major: [abduction, mcp, pip, dip] x 5.
struct HandPose {
  PoseVector theta = PoseVector::Zero();

  static HandPose zero() { return {}; }
  /// Uniform flexion on every flexion DOF, zero abduction.
  static HandPose uniform_flexion(double angle);

  bool is_finite() const { return theta.allFinite(); }
  HandPose clamped(const JointLimits& limits) const;
  bool within(const JointLimits& limits, double tol = 0.0) const;
  static bool is_abduction(int dof) { return dof % kDofsPerFinger == 0; }
};

struct Capsule {
  Vec3 a, b;
  double radius;
};

/// Everything forward kinematics knows about a posed hand.
struct HandKinematics {
  std::array<Vec3, kJoints> joints;
  std::array<Vec3, kFingers> tips;
  std::array<Capsule, kBones> capsules;
  /// World rotation axis and pivot of every DOF.
  std::array<Vec3, kPoseDofs> dof_axis;
  std::array<Vec3, kPoseDofs> dof_pivot;
  /// Segment frames (rest -> posed) for proximal/middle/distal of each finger.
  std::array<std::array<Mat3, 3>, kFingers> segment_rotation;

  /// d point / d theta for a point rigidly attached to `bone`.
  Eigen::Matrix<double, 3, kPoseDofs> point_jacobian(const Vec3& point, int bone) const;
};

HandKinematics pose_hand(const HandSkeleton& skeleton, const HandPose& pose);

std::array<Vec3, kJoints> forward_kinematics(const HandSkeleton& skeleton, const HandPose& pose);
JointJacobian fk_jacobian(const HandSkeleton& skeleton, const HandPose& pose);

/// 15-channel field: channel i = min(‖x/h - J_i/h‖², 4) at every voxel center.
VoxelGrid skeletal_field(const HandSkeleton& skeleton, const HandPose& pose, const GridSpec& spec);
VoxelGrid skeletal_field_from_joints(std::span<const Vec3> joints, const GridSpec& spec);

/// Adjoint of skeletal_field_from_joints: returns d(sum upstream * field)/d(joint positions, meters).
std::array<Vec3, kJoints> skeletal_field_vjp(std::span<const Vec3> joints, const GridSpec& spec,
                                             const VoxelGrid& upstream);

/// Capsule-union signed distance (meters), negative inside.
double hand_sdf(const HandKinematics& kin, const Vec3& point);
std::vector<double> hand_sdf(const HandSkeleton& skeleton, const HandPose& pose, std::span<const Vec3> points);

/// Nearest capsule and its signed distance.
struct HandDistance {
  double distance;
  int bone;
};
HandDistance hand_sdf_with_bone(const HandKinematics& kin, const Vec3& point);

struct SurfaceSample {
  Vec3 position;
  double area;  ///< m^2
  int bone;
};

/// Deterministic stratified samples over capsule surfaces at `density` points
/// per cm^2; points inside another capsule are dropped so the weights sum to
/// the area of the capsule union.
std::vector<SurfaceSample> hand_surface_samples(const HandKinematics& kin, double density_per_cm2);
/// Same for an arbitrary capsule union; `bone` is the capsule index.
std::vector<SurfaceSample> capsule_surface_samples(std::span<const Capsule> capsules, double density_per_cm2);
std::vector<SurfaceSample> hand_surface_samples(const HandSkeleton& skeleton, const HandPose& pose,
                                                double density_per_cm2);

struct ContactPoint {
  Vec3 position;
  int bone;
};

/// Fingertip pads (thumb..pinky) followed by three palm anchors.
std::array<ContactPoint, kContactPoints> contact_points(const HandSkeleton& skeleton, const HandKinematics& kin);

/// Capsule meshes for export.
struct TriMesh;
TriMesh hand_mesh(const HandKinematics& kin, int segments = 12);

// ---------------------------------------------------------------------------
// Pose recovery

struct PoseFitOptions {
  double reg_weight = 1e-5;
  int steps = 1000;
  double lr = 1e-2;
};

struct PoseFitResult {
  HandPose pose;
  double residual = 0.0;  ///< mean squared field residual at the returned pose
  double objective = 0.0; ///< residual + reg_weight * ‖θ‖²
};

/// Adam on mean squared field residual + reg_weight‖θ‖², projecting onto the
/// joint limits after each step. Throws NonFiniteObjective on a corrupt field.
PoseFitResult pose_from_field(const HandSkeleton& skeleton, const VoxelGrid& field, const HandPose& init,
                              const PoseFitOptions& options = {});

/// Mean squared residual between the field induced by `pose` and `field`,
/// evaluated voxel by voxel.
double field_residual(const HandSkeleton& skeleton, const HandPose& pose, const VoxelGrid& field);

/// Exact gradient of the mean squared residual with respect to joint
/// positions (meters), via row prefix sums; cost is independent of most of
/// the lattice.
class FieldResidualGradient {
 public:
  explicit FieldResidualGradient(const VoxelGrid& field);
  std::array<Vec3, kJoints> operator()(std::span<const Vec3> joints) const;

 private:
  GridSpec spec_;
  std::vector<double> prefix_h_;   // per channel, per row: inclusive prefix of target along x
  std::vector<double> prefix_hx_;  // same, weighted by the voxel x coordinate
  std::vector<Eigen::Vector4d> totals_;  // per channel: sum H, sum H*x, sum H*y, sum H*z
  std::vector<double> x_, y_, z_;
};

}  // namespace hop
