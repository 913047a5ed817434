#pragma once

#include <cstdint>
#include <vector>

#include "hop/diffusion.hpp"
#include "hop/hand_model.hpp"
#include "hop/interaction.hpp"
#include "hop/latent_codec.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

/// Relative object->hand transform plus articulation.
struct GraspParams {
  RigidTransform transform;
  HandPose pose;
  bool is_finite() const { return transform.is_finite() && pose.is_finite(); }
};

struct GraspConfig {
  // initialization
  double mean_flexion = 0.4;
  double init_translation_radius = 0.10;  // m, around the palm center
  // SDS stage
  int iterations = 500;
  double lr_translation = 1e-2;  // normalized grid units per step
  double lr_rotation = 1e-2;
  double lr_pose = 1e-2;
  SdsOptions sds{0.02, 0.98, 1};
  bool freeze_transform = false;
  RankOptions loss_estimate{};  // stratified SDS loss reported at start and end
  // refinement
  int refine_iterations = 200;
  double lambda_contact = 1.0;
  double lambda_penetration = 10.0;
  double lambda_reg = 0.1;
  double contact_knee = 0.01;     // m
  double refine_lr_translation = 1e-3;  // m
  double refine_lr_rotation = 1e-2;
  double refine_lr_pose = 1e-2;
  double sample_density = 2.0;    // hand surface samples per cm^2
  // metrics
  double contact_threshold = 0.0025;  // m
  double metric_density = 4.0;
};

GraspParams init_grasp(const HandSkeleton& skeleton, std::uint64_t seed, const GraspConfig& config = {});

struct GraspTrace {
  std::vector<double> sds_loss;  ///< per-iteration Monte-Carlo SDS loss
  double initial_loss = 0.0;     ///< stratified estimate at the initial params
  double final_loss = 0.0;       ///< stratified estimate at the final params
};

struct GraspResult {
  GraspParams params;
  GraspTrace trace;
};

/// Everything the SDS objective depends on besides the parameters.
struct GraspProblem {
  const SdfGrid& object;  ///< object frame, same lattice as the hand frame
  const Codec& codec;
  const Denoiser& denoiser;
  const NoiseSchedule& schedule;
  Condition condition;
  const HandSkeleton& skeleton;
};

/// Stratified SDS loss (negated rank score) of the assembled grid.
double grasp_sds_loss(const GraspProblem& problem, const GraspParams& params, std::uint64_t seed,
                      const RankOptions& options = {});

GraspResult synthesize_grasp(const GraspProblem& problem, std::uint64_t seed, const GraspConfig& config = {});
/// Same, from a caller-provided start.
GraspResult synthesize_grasp_from(const GraspProblem& problem, const GraspParams& init, std::uint64_t seed,
                                  const GraspConfig& config = {});

/// Object SDF in meters at hand-frame points, with the hand->object transform applied.
struct ObjectField {
  const SdfGrid& grid;
  RigidTransform transform;  ///< object -> hand
  double distance(const Vec3& hand_point) const;
  /// Distance and its gradient with respect to the hand-frame point.
  double distance(const Vec3& hand_point, Vec3& gradient) const;
};

struct RefineTrace {
  std::vector<double> loss;
  std::vector<double> max_penetration;  ///< m, per iterate (first entry = input)
};

/// Contact/penetration refinement against the object SDF.
GraspParams refine_grasp(const GraspParams& grasp, const SdfGrid& object, const HandSkeleton& skeleton,
                         const GraspConfig& config = {}, RefineTrace* trace = nullptr);
GraspParams refine_grasp(const GraspParams& grasp, const TriMesh& object, const HandSkeleton& skeleton,
                         const GraspConfig& config = {}, RefineTrace* trace = nullptr);

struct GraspMetrics {
  double max_depth = 0.0;      ///< m
  double mean_depth = 0.0;     ///< m, over penetrating samples
  double volume = 0.0;         ///< cm^3
  double contact_ratio = 0.0;  ///< 0 or 1 per grasp
  double contact_area = 0.0;   ///< cm^2
};

GraspMetrics grasp_metrics(const GraspParams& grasp, const SdfGrid& object, const HandSkeleton& skeleton,
                           const GraspConfig& config = {});
/// Metrics of an arbitrary capsule union (hand frame) against the object.
GraspMetrics capsule_metrics(std::span<const Capsule> capsules, const SdfGrid& object,
                             const RigidTransform& object_to_hand, const GraspConfig& config = {});

struct RankedGrasp {
  std::size_t index = 0;  ///< position in the input list
  double score = 0.0;
};

/// Descending by rank score; ties keep input order.
std::vector<RankedGrasp> rank_grasps(const GraspProblem& problem, const std::vector<GraspParams>& grasps,
                                     std::uint64_t seed, const RankOptions& options = {});

}  // namespace hop
