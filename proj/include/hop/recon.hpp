#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "hop/diffusion.hpp"
#include "hop/hand_model.hpp"
#include "hop/interaction.hpp"
#include "hop/latent_codec.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

/// Orthographic camera looking along `direction` through `center`; pixel rows
/// run top to bottom.
struct OrthoCamera {
  Vec3 direction = -Vec3::UnitZ();
  Vec3 up = Vec3::UnitY();
  Vec3 center = Vec3::Zero();
  double half_width = 0.15;  // m
  int resolution = 48;

  Vec3 right() const { return direction.cross(up).normalized(); }
  Vec3 true_up() const { return right().cross(direction).normalized(); }
  /// Ray origin (on the plane through `center`) of pixel (u, v).
  Vec3 pixel_origin(int u, int v) const;
};

struct Image {
  int width = 0, height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  double& at(int u, int v) { return pixels[static_cast<std::size_t>(v) * width + u]; }
  double at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }
};

/// Binary 8-bit PGM (P5).
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

/// IoU of the two masks thresholded at 0.5.
double silhouette_iou(const Image& a, const Image& b);

/// World frame = object frame. Frame t places the hand by T^t (object -> hand).
struct SceneParams {
  SdfGrid object;
  std::vector<HandPose> poses;
  std::vector<RigidTransform> transforms;

  int frames() const { return static_cast<int>(poses.size()); }
  void validate() const;
};

struct RenderOptions {
  double tau = 0.0;  ///< occupancy temperature in meters; 0 means one voxel pitch
  /// Ray samples farther than this many tau from every hand capsule, or in
  /// object blocks whose values all exceed it, are skipped (their factor
  /// differs from 1 by less than e^-margin). Infinity disables culling.
  double cull_margin = 8.0;
};

struct SilhouetteMasks {
  Image object, hand;
};

SilhouetteMasks render_silhouette(const SceneParams& scene, const HandSkeleton& skeleton, int frame,
                                  const OrthoCamera& camera, const RenderOptions& options = {});

struct SceneGradient {
  SdfGrid object;
  std::vector<PoseVector> poses;
  std::vector<Vec3> translation;
  std::vector<Vec3> rotation_tangent;  ///< left increments exp(δ)R

  static SceneGradient zeros(const SceneParams& scene);
};

/// Accumulates the adjoint of render_silhouette for upstream mask gradients.
void render_silhouette_vjp(const SceneParams& scene, const HandSkeleton& skeleton, int frame,
                           const OrthoCamera& camera, const RenderOptions& options, const Image& d_object,
                           const Image& d_hand, SceneGradient& gradient);

/// Hand-centric interaction grid of frame t (object resampled by T^t, encoded).
AssembledInteraction extract_frame_grid(const SceneParams& scene, const Codec& codec, const HandSkeleton& skeleton,
                                        int frame);

struct ClipFrame {
  std::vector<OrthoCamera> cameras;
  std::vector<Image> object_masks;
  std::vector<Image> hand_masks;
};

struct ClipObservation {
  std::vector<ClipFrame> frames;
  GridSpec spec;  ///< lattice of the reconstructed object
  /// Noisy initial hand estimate (what an off-the-shelf hand tracker would give).
  std::vector<HandPose> initial_poses;
  std::vector<RigidTransform> initial_transforms;
};

/// Three orthographic views per frame, turning slowly across the clip.
std::vector<OrthoCamera> default_clip_cameras(int frame, int frames, int resolution = 48, double half_width = 0.15);

struct ClipNoise {
  double pose = 0.1;          // rad
  double translation = 0.005; // m
  double rotation = 0.05;     // rad
};

/// Renders ground-truth masks and perturbs the hand parameters for initialization.
ClipObservation make_synthetic_clip(const SceneParams& ground_truth, const HandSkeleton& skeleton, std::uint64_t seed,
                                    int resolution = 48, const ClipNoise& noise = {}, const RenderOptions& render = {});

struct ReconConfig {
  double lambda_reprojection = 1.0;
  double lambda_eikonal = 0.1;
  double lambda_smooth = 0.1;
  double lambda_sds = 1e-3;
  int max_iterations = 15000;
  int min_iterations = 300;
  int plateau_window = 100;
  double plateau_tolerance = 5e-3;  ///< relative drop of windowed reprojection loss
  /// Absolute drop per mask pixel and iteration below which the fit also counts as flat.
  double plateau_floor = 1e-5;
  int noise_update_every = 100;
  double sds_u_min = 0.02;
  AdaptiveNoiseConfig noise;
  double lr_object = 3e-3;         // normalized SDF units
  double lr_translation = 1e-3;    // m
  double lr_rotation = 5e-3;
  double lr_pose = 1e-2;
  double init_box_half_size = 0.06;  // m, initial object
  RenderOptions render;
  std::uint64_t seed = 0;
};

struct ReconResult {
  SceneParams scene;
  std::vector<double> loss;
  std::vector<double> reprojection;
  std::vector<double> noise_bound;
  int iterations = 0;
};

ReconResult reconstruct_clip(const ClipObservation& obs, const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const Condition& condition, const Codec& codec, const HandSkeleton& skeleton,
                             const ReconConfig& config = {});

/// Mean per-frame silhouette IoU over the object masks of each frame.
std::vector<double> clip_iou(const SceneParams& scene, const ClipObservation& obs, const HandSkeleton& skeleton,
                             const RenderOptions& options = {});

struct ReconMetrics {
  double fscore_5 = 0.0, fscore_10 = 0.0;
  double chamfer_mm = 0.0;
  double hand_frame_chamfer_mm = 0.0;
  std::vector<double> mpjpe_mm;  ///< per frame
};

/// Object metrics after scaled ICP; CD_h in the hand frame without alignment.
ReconMetrics recon_metrics(const SceneParams& scene, const SceneParams& ground_truth, const HandSkeleton& skeleton,
                           std::size_t samples = 10000, std::uint64_t seed = 0);

}  // namespace hop
