#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hop/error.hpp"
#include "hop/hand_model.hpp"
#include "hop/sdf_geometry.hpp"
#include "support.hpp"

using namespace hop;

namespace {

// Chain composition written directly with Eigen's angle-axis type.
std::array<Vec3, kJoints> fk_oracle(const HandSkeleton& s, const HandPose& pose) {
  std::array<Vec3, kJoints> out;
  for (int f = 0; f < kFingers; ++f) {
    const FingerConfig& fc = s.fingers[f];
    const double* th = pose.theta.data() + kDofsPerFinger * f;
    const Eigen::AngleAxisd ab(th[0], fc.abduction_axis);
    const Eigen::AngleAxisd m(th[1], fc.flexion_axis), p(th[2], fc.flexion_axis);
    const Vec3 p0 = s.wrist + fc.mcp_offset;
    const Vec3 p1 = p0 + (ab * m) * (fc.segment_lengths[0] * fc.direction);
    const Vec3 p2 = p1 + (ab * m * p) * (fc.segment_lengths[1] * fc.direction);
    out[3 * f] = p0;
    out[3 * f + 1] = p1;
    out[3 * f + 2] = p2;
  }
  return out;
}

double capsule_distance(const Capsule& c, const Vec3& p) {
  const Vec3 ab = c.b - c.a;
  const double t = std::clamp((p - c.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (c.a + t * ab)).norm() - c.radius;
}

}  // namespace

TEST_SUITE("hand_model") {

TEST_CASE("canonical skeleton is valid and fits the grid") {
  const HandSkeleton s = HandSkeleton::canonical();
  CHECK_NOTHROW(s.validate());
  CHECK_THROWS_AS(s.validate(0.05), Error);
  HandSkeleton bad = s;
  bad.fingers[2].radii[1] = -0.001;
  try {
    bad.validate();
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
  }
  const auto parents = HandSkeleton::parents();
  for (int f = 0; f < kFingers; ++f) {
    CHECK(parents[3 * f] == -1);
    CHECK(parents[3 * f + 2] == 3 * f + 1);
  }
}

TEST_CASE("rest pose lays every finger along its direction") {
  const HandSkeleton s = HandSkeleton::canonical();
  const auto j = forward_kinematics(s, HandPose::zero());
  for (int f = 0; f < kFingers; ++f) {
    const auto& fc = s.fingers[f];
    CHECK((j[3 * f] - (s.wrist + fc.mcp_offset)).norm() < 1e-15);
    CHECK((j[3 * f + 1] - j[3 * f] - fc.segment_lengths[0] * fc.direction).norm() < 1e-15);
    CHECK((j[3 * f + 2] - j[3 * f + 1] - fc.segment_lengths[1] * fc.direction).norm() < 1e-15);
  }
}

TEST_CASE("a right-angle flexion bends the index toward the palm side") {
  const HandSkeleton s = HandSkeleton::canonical();
  HandPose p;
  p.theta[kDofsPerFinger * 1 + 1] = std::numbers::pi / 2;
  const auto j = forward_kinematics(s, p);
  const Vec3 seg = j[4] - j[3];
  CHECK(seg.norm() == doctest::Approx(s.fingers[1].segment_lengths[0]));
  CHECK(seg.dot(s.palm_normal) == doctest::Approx(s.fingers[1].segment_lengths[0]).epsilon(1e-3));
  CHECK(std::abs(seg.dot(s.fingers[1].direction)) < 1e-12);
}

TEST_CASE("forward kinematics matches an independent chain") {
  const HandSkeleton s = HandSkeleton::canonical();
  std::mt19937_64 rng(1);
  for (int n = 0; n < 100; ++n) {
    const HandPose p = test::random_pose(rng);
    const auto a = forward_kinematics(s, p), b = fk_oracle(s, p);
    for (int i = 0; i < kJoints; ++i) REQUIRE((a[i] - b[i]).norm() < 1e-12);
    const auto lengths = s.bone_lengths();
    for (int i = 0; i < kJoints; ++i) {
      const int par = HandSkeleton::parents()[i];
      const Vec3 from = par < 0 ? s.wrist : a[par];
      CHECK((a[i] - from).norm() == doctest::Approx(lengths[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("FK Jacobian matches central differences") {
  const HandSkeleton s = HandSkeleton::canonical();
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  for (int n = 0; n < 100; ++n) {
    const HandPose p = test::random_pose(rng);
    const JointJacobian jac = fk_jacobian(s, p);
    for (int d = 0; d < kPoseDofs; ++d) {
      HandPose a = p, b = p;
      a.theta[d] += h;
      b.theta[d] -= h;
      const auto ja = forward_kinematics(s, a), jb = forward_kinematics(s, b);
      for (int i = 0; i < kJoints; ++i) {
        const Vec3 fd = (ja[i] - jb[i]) / (2 * h);
        REQUIRE((jac.block<3, 1>(3 * i, d) - fd).norm() < 1e-7);
      }
    }
  }
}

TEST_CASE("DIP flexion moves no field joint") {
  const HandSkeleton s = HandSkeleton::canonical();
  const JointJacobian jac = fk_jacobian(s, HandPose::uniform_flexion(0.5));
  for (int f = 0; f < kFingers; ++f) CHECK(jac.col(kDofsPerFinger * f + 3).norm() == 0.0);
}

TEST_CASE("pose limits") {
  const JointLimits lim;
  HandPose p = HandPose::uniform_flexion(2.5);
  p.theta[0] = -0.9;
  CHECK_FALSE(p.within(lim));
  const HandPose c = p.clamped(lim);
  CHECK(c.within(lim));
  CHECK(c.theta[0] == lim.abduction_min);
  CHECK(c.theta[1] == lim.flexion_max);
  CHECK(HandPose::uniform_flexion(0.4).theta[0] == 0.0);
  CHECK(HandPose::uniform_flexion(0.4).theta[3] == 0.4);
}

TEST_CASE("skeletal field agrees with brute force") {
  const HandSkeleton s = HandSkeleton::canonical();
  const GridSpec spec = GridSpec::cube(24);
  std::mt19937_64 rng(3);
  for (int n = 0; n < 5; ++n) {
    const HandPose p = test::random_pose(rng);
    const auto joints = forward_kinematics(s, p);
    const VoxelGrid field = skeletal_field(s, p, spec);
    REQUIRE(field.channels() == kJoints);
    for (int q = 0; q < 500; ++q) {
      const int c = rng() % kJoints, i = rng() % 24, j = rng() % 24, k = rng() % 24;
      const double d2 = ((spec.center(i, j, k) - joints[c]) / spec.half_extent).squaredNorm();
      REQUIRE(field.at(c, i, j, k) == doctest::Approx(std::min(d2, kSkeletalClamp)).epsilon(1e-12));
    }
    for (double v : field.values()) REQUIRE((v >= 0.0 && v <= kSkeletalClamp));
  }
}

TEST_CASE("skeletal field adjoint matches central differences") {
  const HandSkeleton s = HandSkeleton::canonical();
  const GridSpec spec = GridSpec::cube(12);
  std::mt19937_64 rng(4);
  for (int n = 0; n < 10; ++n) {
    auto joints = forward_kinematics(s, test::random_pose(rng));
    VoxelGrid up(spec, kJoints);
    for (double& u : up.values()) u = test::uniform(rng, -1, 1);
    const auto grad = skeletal_field_vjp(joints, spec, up);
    auto objective = [&] {
      const VoxelGrid f = skeletal_field_from_joints(joints, spec);
      double acc = 0.0;
      for (std::size_t v = 0; v < f.size(); ++v) acc += up.values()[v] * f.values()[v];
      return acc;
    };
    const double h = 1e-7;
    for (int c = 0; c < kJoints; ++c)
      for (int a = 0; a < 3; ++a) {
        const double orig = joints[c][a];
        joints[c][a] = orig + h;
        const double fp = objective();
        joints[c][a] = orig - h;
        const double fm = objective();
        joints[c][a] = orig;
        // The clamp at 4 is reached far from every joint on this lattice only at the corners.
        CHECK(test::rel_err(grad[c][a], (fp - fm) / (2 * h), 1.0) < 1e-5);
      }
  }
}

TEST_CASE("hand sdf is the capsule union and 1-Lipschitz") {
  const HandSkeleton s = HandSkeleton::canonical();
  std::mt19937_64 rng(5);
  const HandKinematics kin = pose_hand(s, test::random_pose(rng));
  for (int n = 0; n < 1000; ++n) {
    const Vec3 p = test::random_vec(rng, -0.12, 0.12);
    double want = std::numeric_limits<double>::infinity();
    int bone = -1;
    for (int b = 0; b < kBones; ++b) {
      const double d = capsule_distance(kin.capsules[b], p);
      if (d < want) want = d, bone = b;
    }
    CHECK(hand_sdf(kin, p) == doctest::Approx(want).epsilon(1e-12));
    CHECK(hand_sdf_with_bone(kin, p).bone == bone);
    const Vec3 q = p + test::random_vec(rng, -0.01, 0.01);
    CHECK(std::abs(hand_sdf(kin, p) - hand_sdf(kin, q)) <= (p - q).norm() + 1e-12);
  }
}

TEST_CASE("surface samples of a single capsule carry its area") {
  const Capsule c{Vec3(0, 0, 0), Vec3(0.03, 0.01, 0), 0.01};
  const double len = (c.b - c.a).norm();
  const double exact = (2 * std::numbers::pi * c.radius * len + 4 * std::numbers::pi * c.radius * c.radius) * 1e4;
  const auto samples = capsule_surface_samples(std::span(&c, 1), 4.0);
  double area = 0.0;
  for (const auto& sm : samples) {
    area += sm.area;
    CHECK(std::abs(capsule_distance(c, sm.position)) < 1e-12);
  }
  CHECK(area * 1e4 == doctest::Approx(exact).epsilon(1e-6));
  CHECK(samples.size() >= static_cast<std::size_t>(4.0 * exact * 0.9));
}

TEST_CASE("hand surface samples lie on the union boundary") {
  const HandSkeleton s = HandSkeleton::canonical();
  const HandKinematics kin = pose_hand(s, HandPose::uniform_flexion(0.6));
  const auto samples = hand_surface_samples(kin, 4.0);
  REQUIRE_FALSE(samples.empty());
  double area = 0.0, sum_caps = 0.0;
  for (const auto& sm : samples) {
    area += sm.area;
    CHECK(std::abs(hand_sdf(kin, sm.position)) < 1e-9);
  }
  for (const auto& c : kin.capsules)
    sum_caps += 2 * std::numbers::pi * c.radius * (c.b - c.a).norm() + 4 * std::numbers::pi * c.radius * c.radius;
  CHECK(area < sum_caps);

  // Union area cross-check against the isosurface of the analytic hand field.
  const GridSpec spec = GridSpec::cube(96);
  const SdfGrid g = sdf_from_function(spec, [&](const Vec3& p) { return hand_sdf(kin, p); });
  CHECK(area == doctest::Approx(marching_cubes(g).area()).epsilon(0.05));
  CHECK(hand_surface_samples(kin, 4.0).size() == samples.size());
}

TEST_CASE("contact points sit on the finger pads and palm") {
  const HandSkeleton s = HandSkeleton::canonical();
  const HandKinematics kin = pose_hand(s, HandPose::uniform_flexion(0.3));
  const auto cps = contact_points(s, kin);
  for (int f = 0; f < kFingers; ++f) {
    CHECK(cps[f].bone == kBonesPerFinger * f + 3);
    CHECK((cps[f].position - kin.tips[f]).norm() < 0.02);
  }
  for (const auto& c : cps) CHECK(std::abs(hand_sdf(kin, c.position)) < 1e-3);
}

TEST_CASE("hand mesh is a closed union of capsules") {
  const HandKinematics kin = pose_hand(HandSkeleton::canonical(), HandPose::zero());
  const TriMesh m = hand_mesh(kin);
  CHECK(m.valid());
  for (const auto& v : m.vertices) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& c : kin.capsules) nearest = std::min(nearest, std::abs(capsule_distance(c, v)));
    CHECK(nearest < 1e-3);
  }
}

}  // TEST_SUITE

TEST_SUITE("pose_fit") {

TEST_CASE("field residual vanishes at the generating pose") {
  const HandSkeleton s = HandSkeleton::canonical();
  std::mt19937_64 rng(8);
  const HandPose p = test::random_pose(rng);
  const VoxelGrid f = skeletal_field(s, p, GridSpec::cube(16));
  CHECK(field_residual(s, p, f) < 1e-24);
  CHECK(field_residual(s, HandPose::zero(), f) > 0.0);
}

TEST_CASE("prefix-sum residual gradient matches central differences") {
  const HandSkeleton s = HandSkeleton::canonical();
  const GridSpec spec = GridSpec::cube(16);
  std::mt19937_64 rng(9);
  for (int n = 0; n < 10; ++n) {
    const VoxelGrid target = skeletal_field(s, test::random_pose(rng), spec);
    auto joints = forward_kinematics(s, test::random_pose(rng));
    const FieldResidualGradient grad_of(target);
    const auto grad = grad_of(joints);
    auto residual = [&] {
      const VoxelGrid f = skeletal_field_from_joints(joints, spec);
      double acc = 0.0;
      for (std::size_t v = 0; v < f.size(); ++v) acc += (f.values()[v] - target.values()[v]) * (f.values()[v] - target.values()[v]);
      return acc / static_cast<double>(f.size());
    };
    const double h = 1e-7;
    for (int c = 0; c < kJoints; ++c)
      for (int a = 0; a < 3; ++a) {
        const double orig = joints[c][a];
        joints[c][a] = orig + h;
        const double fp = residual();
        joints[c][a] = orig - h;
        const double fm = residual();
        joints[c][a] = orig;
        CHECK(test::rel_err(grad[c][a], (fp - fm) / (2 * h), 1e-3) < 1e-4);
      }
  }
}

TEST_CASE("pose recovery from a field") {
  const HandSkeleton s = HandSkeleton::canonical();
  const GridSpec spec = GridSpec::cube(32);
  std::mt19937_64 rng(10);
  for (int n = 0; n < 5; ++n) {
    const HandPose truth = test::random_pose(rng);
    const VoxelGrid f = skeletal_field(s, truth, spec);
    PoseFitOptions options;
    options.steps = 3000;
    const PoseFitResult r = pose_from_field(s, f, HandPose::uniform_flexion(0.4), options);
    CHECK(r.pose.within(s.limits));
    const auto a = forward_kinematics(s, r.pose), b = forward_kinematics(s, truth);
    double worst = 0.0;
    for (int i = 0; i < kJoints; ++i) worst = std::max(worst, (a[i] - b[i]).norm());
    CHECK(worst < 1e-3);
    CHECK(r.objective >= r.residual);
  }
}

TEST_CASE("corrupt fields are rejected") {
  const HandSkeleton s = HandSkeleton::canonical();
  VoxelGrid f = skeletal_field(s, HandPose::zero(), GridSpec::cube(8));
  f.values()[17] = std::numeric_limits<double>::quiet_NaN();
  try {
    pose_from_field(s, f, HandPose::zero());
    FAIL("expected NonFiniteObjective");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteObjective);
  }
  CHECK_THROWS_AS(pose_from_field(s, VoxelGrid(GridSpec::cube(8), 3), HandPose::zero()), Error);
}

}  // TEST_SUITE
