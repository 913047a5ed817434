#include "hop/grasp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hop/adam.hpp"
#include "hop/error.hpp"

namespace hop {

GraspParams init_grasp(const HandSkeleton& skeleton, std::uint64_t seed, const GraspConfig& config) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  const Eigen::AngleAxisd aa(q);
  Vec3 dir(normal(rng), normal(rng), normal(rng));
  dir.normalize();
  const double r = config.init_translation_radius * std::cbrt(unit(rng));
  GraspParams g;
  g.transform.rotation = aa.angle() * aa.axis();
  g.transform.translation = skeleton.palm_center() + r * dir;
  g.pose = HandPose::uniform_flexion(config.mean_flexion).clamped(skeleton.limits);
  return g;
}

double grasp_sds_loss(const GraspProblem& p, const GraspParams& params, std::uint64_t seed,
                      const RankOptions& options) {
  const auto a = assemble_interaction(p.codec, p.object, params.transform, p.skeleton, params.pose);
  return -rank_score(a.grid.data, p.denoiser, p.schedule, p.condition, seed, options);
}

namespace {

void apply_left_rotation(RigidTransform& t, const Vec3& delta) {
  t.rotation = so3_log(so3_exp(delta) * t.rotation_matrix());
}

}  // namespace

GraspResult synthesize_grasp_from(const GraspProblem& p, const GraspParams& init, std::uint64_t seed,
                                  const GraspConfig& config) {
  require(p.object.channels() == 1 && p.object.all_finite(), ErrorCode::InvalidArgument,
          "object grid must be a finite single-channel SDF");
  require(config.iterations >= 0, ErrorCode::InvalidArgument, "iterations must be >= 0");
  const double h = p.object.spec().half_extent;
  GraspResult result;
  GraspParams g = init;
  g.pose = g.pose.clamped(p.skeleton.limits);
  const std::uint64_t loss_seed = mix_seed(seed, 2);
  result.trace.initial_loss = grasp_sds_loss(p, g, loss_seed, config.loss_estimate);

  std::mt19937_64 rng(mix_seed(seed, 1));
  Adam adam_t(3, config.lr_translation), adam_r(3, config.lr_rotation), adam_p(kPoseDofs, config.lr_pose);
  std::array<double, 3> grad3, step3;
  PoseVector step_pose;
  for (int it = 0; it < config.iterations; ++it) {
    const auto a = assemble_interaction(p.codec, p.object, g.transform, p.skeleton, g.pose);
    const SdsResult sds = sds_gradient(a.grid.data, p.denoiser, p.schedule, p.condition, config.sds, rng);
    result.trace.sds_loss.push_back(sds.loss);
    const InteractionGradient grad = interaction_vjp(p.codec, p.object, g.transform, p.skeleton, a, sds.gradient);
    if (!config.freeze_transform) {
      for (int k = 0; k < 3; ++k) grad3[k] = h * grad.transform[3 + k];
      adam_t.direction(grad3, step3);
      for (int k = 0; k < 3; ++k) g.transform.translation[k] += h * step3[k];
      for (int k = 0; k < 3; ++k) grad3[k] = grad.rotation_tangent[k];
      adam_r.direction(grad3, step3);
      apply_left_rotation(g.transform, Vec3(step3[0], step3[1], step3[2]));
    }
    adam_p.direction(std::span<const double>(grad.theta.data(), kPoseDofs),
                     std::span<double>(step_pose.data(), kPoseDofs));
    g.pose.theta += step_pose;
    g.pose = g.pose.clamped(p.skeleton.limits);
    if (!g.is_finite() || !std::isfinite(sds.loss))
      fail(ErrorCode::DivergedOptimization, "grasp parameters became non-finite at iteration " + std::to_string(it));
  }
  result.params = g;
  result.trace.final_loss = grasp_sds_loss(p, g, loss_seed, config.loss_estimate);
  return result;
}

GraspResult synthesize_grasp(const GraspProblem& p, std::uint64_t seed, const GraspConfig& config) {
  return synthesize_grasp_from(p, init_grasp(p.skeleton, seed, config), seed, config);
}

// ---------------------------------------------------------------------------
// Object distance queries

double ObjectField::distance(const Vec3& hand_point) const {
  Vec3 unused;
  return distance(hand_point, unused);
}

double ObjectField::distance(const Vec3& hand_point, Vec3& gradient) const {
  const double h = grid.spec().half_extent;
  const Vec3 q = transform.apply_inverse(hand_point);
  const TrilinearSample s = sample_trilinear(grid, 0, q / h);
  gradient = transform.rotation_matrix() * s.gradient;
  return transform.scale * h * s.value;
}

// ---------------------------------------------------------------------------
// Refinement

namespace {

struct RefineEval {
  double loss = 0.0;
  double max_penetration = 0.0;
  Vec3 grad_translation = Vec3::Zero();
  Vec3 grad_rotation = Vec3::Zero();  // left tangent
  PoseVector grad_theta = PoseVector::Zero();
};

RefineEval evaluate_refine(const GraspParams& g, const HandPose& start, const ObjectField& field,
                           const HandSkeleton& skeleton, const GraspConfig& c) {
  RefineEval e;
  const HandKinematics kin = pose_hand(skeleton, g.pose);
  auto accumulate = [&](const Vec3& p, int bone, double dloss_dsdf, const Vec3& grad_p) {
    const Vec3 a = dloss_dsdf * grad_p;
    e.grad_translation -= a;
    e.grad_rotation += a.cross(p - g.transform.translation);
    e.grad_theta += kin.point_jacobian(p, bone).transpose() * a;
  };
  const double k = c.contact_knee;
  for (const auto& cp : contact_points(skeleton, kin)) {
    Vec3 grad;
    const double d = field.distance(cp.position, grad);
    const double ad = std::abs(d);
    e.loss += c.lambda_contact * (ad < k ? ad * ad : 2.0 * k * ad - k * k);
    const double slope = (ad < k ? 2.0 * ad : 2.0 * k) * (d < 0 ? -1.0 : 1.0);
    accumulate(cp.position, cp.bone, c.lambda_contact * slope, grad);
  }
  for (const auto& s : hand_surface_samples(kin, c.sample_density)) {
    Vec3 grad;
    const double d = field.distance(s.position, grad);
    if (d >= 0) continue;
    e.max_penetration = std::max(e.max_penetration, -d);
    e.loss += c.lambda_penetration * d * d;
    accumulate(s.position, s.bone, 2.0 * c.lambda_penetration * d, grad);
  }
  const PoseVector dtheta = g.pose.theta - start.theta;
  e.loss += c.lambda_reg * dtheta.squaredNorm();
  e.grad_theta += 2.0 * c.lambda_reg * dtheta;
  return e;
}

}  // namespace

GraspParams refine_grasp(const GraspParams& grasp, const SdfGrid& object, const HandSkeleton& skeleton,
                         const GraspConfig& c, RefineTrace* trace) {
  require(object.channels() == 1, ErrorCode::InvalidArgument, "object grid must be a single-channel SDF");
  GraspParams g = grasp;
  g.pose = g.pose.clamped(skeleton.limits);
  const HandPose start = g.pose;
  Adam adam_t(3, c.refine_lr_translation), adam_r(3, c.refine_lr_rotation), adam_p(kPoseDofs, c.refine_lr_pose);
  std::array<double, 3> step3;
  PoseVector step_pose;
  for (int it = 0; it <= c.refine_iterations; ++it) {
    const RefineEval e = evaluate_refine(g, start, ObjectField{object, g.transform}, skeleton, c);
    if (trace) {
      trace->loss.push_back(e.loss);
      trace->max_penetration.push_back(e.max_penetration);
    }
    if (it == c.refine_iterations) break;
    // Linear step-size decay.
    const double decay = 1.0 - static_cast<double>(it) / c.refine_iterations;
    adam_t.set_lr(c.refine_lr_translation * decay);
    adam_r.set_lr(c.refine_lr_rotation * decay);
    adam_p.set_lr(c.refine_lr_pose * decay);
    adam_t.direction(std::span<const double>(e.grad_translation.data(), 3), step3);
    g.transform.translation += Vec3(step3[0], step3[1], step3[2]);
    adam_r.direction(std::span<const double>(e.grad_rotation.data(), 3), step3);
    apply_left_rotation(g.transform, Vec3(step3[0], step3[1], step3[2]));
    adam_p.direction(std::span<const double>(e.grad_theta.data(), kPoseDofs),
                     std::span<double>(step_pose.data(), kPoseDofs));
    g.pose.theta += step_pose;
    g.pose = g.pose.clamped(skeleton.limits);
    if (!g.is_finite()) fail(ErrorCode::DivergedOptimization, "refinement produced non-finite parameters");
  }
  return g;
}

GraspParams refine_grasp(const GraspParams& grasp, const TriMesh& object, const HandSkeleton& skeleton,
                         const GraspConfig& config, RefineTrace* trace) {
  return refine_grasp(grasp, mesh_to_sdf(object, GridSpec{}), skeleton, config, trace);
}

// ---------------------------------------------------------------------------
// Metrics

GraspMetrics capsule_metrics(std::span<const Capsule> capsules, const SdfGrid& object,
                             const RigidTransform& object_to_hand, const GraspConfig& c) {
  GraspMetrics m;
  const ObjectField field{object, object_to_hand};
  double depth_sum = 0.0;
  int penetrating = 0;
  for (const auto& s : capsule_surface_samples(capsules, c.metric_density)) {
    const double d = field.distance(s.position);
    if (d < 0) {
      m.max_depth = std::max(m.max_depth, -d);
      depth_sum += -d;
      ++penetrating;
    }
    if (std::abs(d) < c.contact_threshold) m.contact_area += s.area * 1e4;
  }
  m.mean_depth = penetrating > 0 ? depth_sum / penetrating : 0.0;
  m.contact_ratio = m.contact_area > 0.0 ? 1.0 : 0.0;

  // Intersection volume on a 64^3 lattice in the hand frame.
  const GridSpec spec{{64, 64, 64}, object.spec().half_extent};
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& cap : capsules) {
    lo = lo.cwiseMin(cap.a.cwiseMin(cap.b) - Vec3::Constant(cap.radius));
    hi = hi.cwiseMax(cap.a.cwiseMax(cap.b) + Vec3::Constant(cap.radius));
  }
  std::size_t count = 0;
  for (int k = 0; k < spec.dims[2]; ++k)
    for (int j = 0; j < spec.dims[1]; ++j)
      for (int i = 0; i < spec.dims[0]; ++i) {
        const Vec3 x = spec.center(i, j, k);
        if ((x.array() < lo.array()).any() || (x.array() > hi.array()).any()) continue;
        bool in_hand = false;
        for (const auto& cap : capsules) {
          const Vec3 ab = cap.b - cap.a;
          const double len2 = ab.squaredNorm();
          const double t = len2 > 0 ? std::clamp((x - cap.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
          if ((x - cap.a - t * ab).norm() < cap.radius) {
            in_hand = true;
            break;
          }
        }
        if (in_hand && field.distance(x) < 0) ++count;
      }
  m.volume = static_cast<double>(count) * spec.pitch(0) * spec.pitch(1) * spec.pitch(2) * 1e6;
  return m;
}

GraspMetrics grasp_metrics(const GraspParams& grasp, const SdfGrid& object, const HandSkeleton& skeleton,
                           const GraspConfig& config) {
  const HandKinematics kin = pose_hand(skeleton, grasp.pose);
  return capsule_metrics(kin.capsules, object, grasp.transform, config);
}

std::vector<RankedGrasp> rank_grasps(const GraspProblem& p, const std::vector<GraspParams>& grasps,
                                     std::uint64_t seed, const RankOptions& options) {
  require(!grasps.empty(), ErrorCode::InvalidArgument, "no grasps to rank");
  std::vector<RankedGrasp> out;
  for (std::size_t n = 0; n < grasps.size(); ++n) out.push_back({n, -grasp_sds_loss(p, grasps[n], seed, options)});
  std::ranges::stable_sort(out, [](const RankedGrasp& a, const RankedGrasp& b) { return a.score > b.score; });
  return out;
}

}  // namespace hop
