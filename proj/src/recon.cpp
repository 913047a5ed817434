#include "hop/recon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "hop/adam.hpp"
#include "hop/error.hpp"
#include "hop/pointcloud.hpp"

namespace hop {

Vec3 OrthoCamera::pixel_origin(int u, int v) const {
  const double x = (-1.0 + (u + 0.5) * 2.0 / resolution) * half_width;
  const double y = (1.0 - (v + 0.5) * 2.0 / resolution) * half_width;
  return center + x * right() + y * true_up();
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (double p : image.pixels)
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0))));
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) fail(ErrorCode::IoFailure, "unsupported PGM " + path.string());
  in.get();
  Image img(w, h);
  for (double& p : img.pixels) {
    const int c = in.get();
    if (c == EOF) fail(ErrorCode::IoFailure, "truncated PGM " + path.string());
    p = c / 255.0;
  }
  return img;
}

double silhouette_iou(const Image& a, const Image& b) {
  require(a.width == b.width && a.height == b.height, ErrorCode::ShapeMismatch, "mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool x = a.pixels[i] > 0.5, y = b.pixels[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

void SceneParams::validate() const {
  require(object.channels() == 1 && object.spec().valid(), ErrorCode::InvalidArgument, "scene object grid is invalid");
  require(frames() >= 2 && transforms.size() == poses.size(), ErrorCode::InvalidArgument,
          "scene needs at least two frames with one pose and transform each");
}

SceneGradient SceneGradient::zeros(const SceneParams& scene) {
  SceneGradient g;
  g.object = SdfGrid(scene.object.spec(), 1);
  g.poses.assign(scene.frames(), PoseVector::Zero());
  g.translation.assign(scene.frames(), Vec3::Zero());
  g.rotation_tangent.assign(scene.frames(), Vec3::Zero());
  return g;
}

namespace {

double log_sigmoid(double y) { return -(std::max(-y, 0.0) + std::log1p(std::exp(-std::abs(y)))); }
double sigmoid(double y) { return y >= 0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y)); }

void check_frame(const SceneParams& scene, int frame) {
  if (frame < 0 || frame >= scene.frames())
    fail(ErrorCode::FrameOutOfRange, "frame " + std::to_string(frame) + " outside [0, " +
                                         std::to_string(scene.frames()) + ")");
}

/// Sample positions along every ray: a fixed set depending only on the camera and lattice.
struct RaySampler {
  double step, start;
  int count;
  explicit RaySampler(const GridSpec& spec) {
    const double reach = std::sqrt(3.0) * spec.half_extent;
    step = spec.pitch(0);
    count = static_cast<int>(std::ceil(2.0 * reach / step));
    start = -0.5 * count * step + 0.5 * step;
  }
  double at(int k) const { return start + k * step; }

  /// Sample indices whose ray parameter lies in [s0, s1]; empty when first > last.
  std::pair<int, int> range(double s0, double s1) const {
    constexpr double slack = 1e-9;
    const double a = std::max(std::ceil((s0 - start) / step - slack), 0.0);
    const double b = std::min(std::floor((s1 - start) / step + slack), count - 1.0);
    if (!(a <= b)) return {0, -1};
    return {static_cast<int>(a), static_cast<int>(b)};
  }
};

/// Ray parameter interval inside an axis-aligned box (bounds may be infinite).
std::pair<double, double> slab(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
  double s0 = -std::numeric_limits<double>::infinity(), s1 = -s0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return {1.0, 0.0};
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a], t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    s0 = std::max(s0, t0);
    s1 = std::min(s1, t1);
  }
  return {s0, s1};
}

/// Conservative lower bound of the interpolated grid value per 4^3 block.
struct BlockFloor {
  GridSpec spec;
  int bx, by, bz;
  std::vector<double> floor;

  explicit BlockFloor(const SdfGrid& grid) : spec(grid.spec()) {
    bx = (spec.dims[0] + 3) / 4, by = (spec.dims[1] + 3) / 4, bz = (spec.dims[2] + 3) / 4;
    auto block = [&](int a, int b, int c) { return a + static_cast<std::size_t>(bx) * (b + static_cast<std::size_t>(by) * c); };
    std::vector<double> own(static_cast<std::size_t>(bx) * by * bz, std::numeric_limits<double>::infinity());
    const auto v = grid.channel(0);
    for (int k = 0; k < spec.dims[2]; ++k)
      for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
          double& f = own[block(i / 4, j / 4, k / 4)];
          f = std::min(f, v[spec.index(i, j, k)]);
        }
    // Interpolation in a block also reads the first voxel layer of the next block.
    floor = own;
    for (int c = 0; c < bz; ++c)
      for (int b = 0; b < by; ++b)
        for (int a = 0; a < bx; ++a) {
          double f = own[block(a, b, c)];
          for (int dc = 0; dc <= 1; ++dc)
            for (int db = 0; db <= 1; ++db)
              for (int da = 0; da <= 1; ++da)
                if (a + da < bx && b + db < by && c + dc < bz) f = std::min(f, own[block(a + da, b + db, c + dc)]);
          floor[block(a, b, c)] = f;
        }
  }

  double at(const Vec3& normalized) const {
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const double u = (normalized[a] + 1.0) / spec.pitch_normalized(a) - 0.5;
      const int cell = std::clamp(static_cast<int>(std::floor(u)), 0, spec.dims[a] - 1);
      idx[a] = cell / 4;
    }
    return floor[idx[0] + static_cast<std::size_t>(bx) * (idx[1] + static_cast<std::size_t>(by) * idx[2])];
  }

  /// Normalized bounds of all blocks with floor <= skip; border blocks extend
  /// to infinity.
  bool active_bounds(double skip, Vec3& lo, Vec3& hi) const {
    const int nb[3] = {bx, by, bz};
    int bmin[3] = {bx, by, bz}, bmax[3] = {-1, -1, -1};
    for (int c = 0; c < bz; ++c)
      for (int b = 0; b < by; ++b)
        for (int a = 0; a < bx; ++a) {
          if (floor[a + static_cast<std::size_t>(bx) * (b + static_cast<std::size_t>(by) * c)] > skip) continue;
          const int idx[3] = {a, b, c};
          for (int ax = 0; ax < 3; ++ax) bmin[ax] = std::min(bmin[ax], idx[ax]), bmax[ax] = std::max(bmax[ax], idx[ax]);
        }
    if (bmax[0] < 0) return false;
    constexpr double inf = std::numeric_limits<double>::infinity(), slack = 1e-9;
    for (int ax = 0; ax < 3; ++ax) {
      const double pn = spec.pitch_normalized(ax);
      lo[ax] = bmin[ax] == 0 ? -inf : (4 * bmin[ax] + 0.5) * pn - 1.0 - slack;
      hi[ax] = bmax[ax] == nb[ax] - 1 ? inf : (4 * bmax[ax] + 4.5) * pn - 1.0 + slack;
    }
    return true;
  }
};

double tau_of(const SdfGrid& grid, const RenderOptions& o) { return o.tau > 0 ? o.tau : grid.spec().pitch(0); }

Vec3 closest_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return a + t * ab;
}

/// Object side of the renderer, shared by all frames and views of one scene state.
struct ObjectRays {
  const SdfGrid* grid;
  BlockFloor floor;
  double h, tau, skip;
  bool cull, any = true;
  Vec3 lo, hi;  // metric bounds of the active blocks

  ObjectRays(const SdfGrid& g, const RenderOptions& o)
      : grid(&g), floor(g), h(g.spec().half_extent), tau(tau_of(g, o)), cull(std::isfinite(o.cull_margin)) {
    skip = cull ? o.cull_margin * tau / h : 0.0;
    lo = Vec3::Constant(-std::numeric_limits<double>::infinity());
    hi = -lo;
    if (cull) {
      any = floor.active_bounds(skip, lo, hi);
      lo *= h, hi *= h;
    }
  }
};

struct HandRays {
  HandKinematics kin;
  Mat3 rotation;
  Vec3 translation;
  double margin;                                   // m
  std::vector<std::pair<Vec3, Vec3>> boxes;        // per capsule, hand frame, grown by radius + margin

  HandRays(const SceneParams& scene, const HandSkeleton& skeleton, int frame, const RenderOptions& o) {
    kin = pose_hand(skeleton, scene.poses[frame]);
    rotation = scene.transforms[frame].rotation_matrix();
    translation = scene.transforms[frame].translation;
    margin = std::isfinite(o.cull_margin) ? o.cull_margin * tau_of(scene.object, o)
                                          : std::numeric_limits<double>::infinity();
    for (const auto& c : kin.capsules) {
      const Vec3 grow = Vec3::Constant(c.radius + margin);
      boxes.emplace_back(c.a.cwiseMin(c.b) - grow, c.a.cwiseMax(c.b) + grow);
    }
  }
};

struct ObjectHit {
  double sdf;
  std::array<std::pair<std::size_t, double>, 8> stencil;
};

struct HandHit {
  Vec3 p;  // hand frame
  double distance;
  int bone;
};

/// Log transmittance of both layers along one pixel ray. Samples whose
/// object block floor or hand distance exceeds the cull margin are skipped.
struct RayTrace {
  double lo = 0.0, lh = 0.0;
  std::vector<ObjectHit> obj;
  std::vector<HandHit> hand;
  std::vector<std::array<int, 3>> candidates;  // bone, first, last sample
};

void trace_ray(const ObjectRays& ob, const HandRays& hr, const RaySampler& rs, const Vec3& origin, const Vec3& dir,
               bool keep_obj, bool keep_hand, RayTrace& r) {
  r.lo = r.lh = 0.0;
  r.obj.clear();
  r.hand.clear();
  const double h = ob.h, tau = ob.tau;
  const auto values = ob.grid->channel(0);
  const GridSpec& spec = ob.grid->spec();

  if (ob.any) {
    const auto [s0, s1] = slab(origin, dir, ob.lo, ob.hi);
    const auto [k0, k1] = rs.range(s0, s1);
    for (int k = k0; k <= k1; ++k) {
      const Vec3 q = (origin + rs.at(k) * dir) / h;
      if (ob.cull && ob.floor.at(q) > ob.skip) continue;
      ObjectHit hit;
      hit.stencil = trilinear_stencil(spec, q);
      double val = 0.0;
      for (const auto& [idx, w] : hit.stencil) val += w * values[idx];
      hit.sdf = h * val;
      r.lo += log_sigmoid(hit.sdf / tau);
      if (keep_obj) r.obj.push_back(hit);
    }
  }

  const Vec3 po = hr.rotation * origin + hr.translation, pd = hr.rotation * dir;
  r.candidates.clear();
  int first = rs.count, last = -1;
  for (int b = 0; b < kBones; ++b) {
    const auto [s0, s1] = slab(po, pd, hr.boxes[b].first, hr.boxes[b].second);
    const auto [k0, k1] = rs.range(s0, s1);
    if (k0 > k1) continue;
    r.candidates.push_back({b, k0, k1});
    first = std::min(first, k0), last = std::max(last, k1);
  }
  for (int k = first; k <= last; ++k) {
    const Vec3 p = po + rs.at(k) * pd;
    HandDistance best{std::numeric_limits<double>::infinity(), -1};
    for (const auto& [b, k0, k1] : r.candidates) {
      if (k < k0 || k > k1) continue;
      const Capsule& c = hr.kin.capsules[b];
      const double d = (p - closest_on_segment(p, c.a, c.b)).norm() - c.radius;
      if (d < best.distance) best = {d, b};
    }
    if (best.bone < 0 || best.distance > hr.margin) continue;
    r.lh += log_sigmoid(best.distance / tau);
    if (keep_hand) r.hand.push_back({p, best.distance, best.bone});
  }
}

/// Adjoint of one traced ray: d mask / d sdf_s = -P * sigmoid(-sdf_s / tau) / tau.
void backprop_ray(const ObjectRays& ob, const HandRays& hr, const RayTrace& r, double go, double gh, int frame,
                  SceneGradient& g) {
  const double tau = ob.tau;
  if (go != 0.0) {
    auto grad_obj = g.object.channel(0);
    const double po = std::exp(r.lo);
    for (const ObjectHit& hit : r.obj) {
      const double d_sdf = -go * po * sigmoid(-hit.sdf / tau) / tau;
      for (const auto& [idx, w] : hit.stencil) grad_obj[idx] += d_sdf * ob.h * w;
    }
  }
  if (gh != 0.0) {
    const double ph = std::exp(r.lh);
    PoseVector d_pose = PoseVector::Zero();
    Vec3 d_t = Vec3::Zero(), d_r = Vec3::Zero();
    for (const HandHit& hit : r.hand) {
      const Capsule& cap = hr.kin.capsules[hit.bone];
      const Vec3 c = closest_on_segment(hit.p, cap.a, cap.b);
      const Vec3 diff = hit.p - c;
      const double len = diff.norm();
      if (len == 0.0) continue;
      const Vec3 n = diff / len;
      const double d_sdf = -gh * ph * sigmoid(-hit.distance / tau) / tau;
      d_pose -= d_sdf * (hr.kin.point_jacobian(c, hit.bone).transpose() * n);
      d_t += d_sdf * n;
      d_r += d_sdf * (hit.p - hr.translation).cross(n);
    }
    g.poses[frame] += d_pose;
    g.translation[frame] += d_t;
    g.rotation_tangent[frame] += d_r;
  }
}

/// Renders one view and immediately backpropagates the squared mask residual
/// against the targets. Returns the unweighted residual sum.
double reprojection_view(const ObjectRays& ob, const HandRays& hr, const SceneParams& scene, int frame,
                         const OrthoCamera& cam, const Image& target_obj, const Image& target_hand, double weight,
                         SceneGradient& g) {
  const RaySampler rs(scene.object.spec());
  const Vec3 dir = cam.direction.normalized();
  RayTrace r;
  double acc = 0.0;
  for (int v = 0; v < cam.resolution; ++v)
    for (int u = 0; u < cam.resolution; ++u) {
      trace_ray(ob, hr, rs, cam.pixel_origin(u, v), dir, true, true, r);
      const double ro = -std::expm1(r.lo) - target_obj.at(u, v);
      const double rh = -std::expm1(r.lh) - target_hand.at(u, v);
      acc += ro * ro + rh * rh;
      backprop_ray(ob, hr, r, 2.0 * weight * ro, 2.0 * weight * rh, frame, g);
    }
  return acc;
}

}  // namespace

SilhouetteMasks render_silhouette(const SceneParams& scene, const HandSkeleton& skeleton, int frame,
                                  const OrthoCamera& cam, const RenderOptions& opts) {
  check_frame(scene, frame);
  const ObjectRays ob(scene.object, opts);
  const HandRays hr(scene, skeleton, frame, opts);
  const RaySampler rs(scene.object.spec());
  const Vec3 dir = cam.direction.normalized();
  SilhouetteMasks m{Image(cam.resolution, cam.resolution), Image(cam.resolution, cam.resolution)};
  RayTrace r;
  for (int v = 0; v < cam.resolution; ++v)
    for (int u = 0; u < cam.resolution; ++u) {
      trace_ray(ob, hr, rs, cam.pixel_origin(u, v), dir, false, false, r);
      m.object.at(u, v) = -std::expm1(r.lo);
      m.hand.at(u, v) = -std::expm1(r.lh);
    }
  return m;
}

void render_silhouette_vjp(const SceneParams& scene, const HandSkeleton& skeleton, int frame, const OrthoCamera& cam,
                           const RenderOptions& opts, const Image& d_object, const Image& d_hand,
                           SceneGradient& g) {
  check_frame(scene, frame);
  const ObjectRays ob(scene.object, opts);
  const HandRays hr(scene, skeleton, frame, opts);
  const RaySampler rs(scene.object.spec());
  const Vec3 dir = cam.direction.normalized();
  RayTrace r;
  for (int v = 0; v < cam.resolution; ++v)
    for (int u = 0; u < cam.resolution; ++u) {
      const double go = d_object.at(u, v), gh = d_hand.at(u, v);
      if (go == 0.0 && gh == 0.0) continue;
      trace_ray(ob, hr, rs, cam.pixel_origin(u, v), dir, go != 0.0, gh != 0.0, r);
      backprop_ray(ob, hr, r, go, gh, frame, g);
    }
}

AssembledInteraction extract_frame_grid(const SceneParams& scene, const Codec& codec, const HandSkeleton& skeleton,
                                        int frame) {
  check_frame(scene, frame);
  return assemble_interaction(codec, scene.object, scene.transforms[frame], skeleton, scene.poses[frame]);
}

std::vector<OrthoCamera> default_clip_cameras(int frame, int frames, int resolution, double half_width) {
  const double phi = 2.0 * M_PI * frame / (3.0 * std::max(frames, 1));
  const Vec3 radial(std::cos(phi), std::sin(phi), 0.0), tangent(-std::sin(phi), std::cos(phi), 0.0);
  std::vector<OrthoCamera> cams(3);
  cams[0].direction = -radial;
  cams[0].up = Vec3::UnitZ();
  cams[1].direction = -tangent;
  cams[1].up = Vec3::UnitZ();
  cams[2].direction = Vec3(0.3 * radial - Vec3::UnitZ()).normalized();
  cams[2].up = tangent;
  for (auto& c : cams) c.resolution = resolution, c.half_width = half_width;
  return cams;
}

ClipObservation make_synthetic_clip(const SceneParams& gt, const HandSkeleton& skeleton, std::uint64_t seed,
                                    int resolution, const ClipNoise& noise, const RenderOptions& render) {
  gt.validate();
  ClipObservation obs;
  obs.spec = gt.object.spec();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < gt.frames(); ++t) {
    ClipFrame f;
    f.cameras = default_clip_cameras(t, gt.frames(), resolution);
    for (const auto& cam : f.cameras) {
      SilhouetteMasks m = render_silhouette(gt, skeleton, t, cam, render);
      f.object_masks.push_back(std::move(m.object));
      f.hand_masks.push_back(std::move(m.hand));
    }
    obs.frames.push_back(std::move(f));
    HandPose p = gt.poses[t];
    for (int d = 0; d < kPoseDofs; ++d) p.theta[d] += noise.pose * normal(rng);
    obs.initial_poses.push_back(p.clamped(skeleton.limits));
    RigidTransform tr = gt.transforms[t];
    const Vec3 dr(normal(rng), normal(rng), normal(rng)), dt(normal(rng), normal(rng), normal(rng));
    tr.rotation = so3_log(so3_exp(noise.rotation * dr) * tr.rotation_matrix());
    tr.translation += noise.translation * dt;
    obs.initial_transforms.push_back(tr);
  }
  return obs;
}

std::vector<double> clip_iou(const SceneParams& scene, const ClipObservation& obs, const HandSkeleton& skeleton,
                             const RenderOptions& options) {
  std::vector<double> out;
  for (int t = 0; t < static_cast<int>(obs.frames.size()); ++t) {
    std::size_t inter = 0, uni = 0;
    const ClipFrame& f = obs.frames[t];
    for (std::size_t c = 0; c < f.cameras.size(); ++c) {
      const Image pred = render_silhouette(scene, skeleton, t, f.cameras[c], options).object;
      for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool x = pred.pixels[i] > 0.5, y = f.object_masks[c].pixels[i] > 0.5;
        inter += x && y;
        uni += x || y;
      }
    }
    out.push_back(uni == 0 ? 1.0 : static_cast<double>(inter) / uni);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

struct FrameOptim {
  Adam translation, rotation, pose;
  FrameOptim(const ReconConfig& c) : translation(3, c.lr_translation), rotation(3, c.lr_rotation), pose(kPoseDofs, c.lr_pose) {}
};

// Transform distance d(T, T') = ‖Δt‖ + 0.1 * geodesic angle, with gradients
// for the later frame (a) and the earlier frame (b).
struct TransformDistance {
  double value = 0.0;
  Vec3 dt_a = Vec3::Zero(), dr_a = Vec3::Zero();
};

TransformDistance transform_distance(const RigidTransform& a, const RigidTransform& b) {
  TransformDistance d;
  const Vec3 diff = a.translation - b.translation;
  const double n = diff.norm();
  const Vec3 w = so3_log(a.rotation_matrix() * b.rotation_matrix().transpose());
  const double ang = w.norm();
  d.value = n + 0.1 * ang;
  if (n > 0) d.dt_a = diff / n;
  if (ang > 0) d.dr_a = 0.1 * w / ang;
  return d;
}

}  // namespace

ReconResult reconstruct_clip(const ClipObservation& obs, const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const Condition& condition, const Codec& codec, const HandSkeleton& skeleton,
                             const ReconConfig& cfg) {
  const int frames = static_cast<int>(obs.frames.size());
  require(frames >= 2, ErrorCode::InvalidArgument, "a clip needs at least two frames");
  require(static_cast<int>(obs.initial_poses.size()) == frames &&
              static_cast<int>(obs.initial_transforms.size()) == frames,
          ErrorCode::InvalidArgument, "clip needs an initial hand estimate per frame");
  ReconResult res;
  SceneParams& scene = res.scene;
  scene.object = analytic_sdf(ShapeDescriptor::box(Vec3::Constant(cfg.init_box_half_size)), obs.spec);
  scene.poses = obs.initial_poses;
  scene.transforms = obs.initial_transforms;
  scene.validate();

  Adam adam_obj(scene.object.size(), cfg.lr_object);
  std::vector<FrameOptim> adam_frames(frames, FrameOptim(cfg));
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> step_obj(scene.object.size());
  std::array<double, 3> step3;
  PoseVector step_pose;
  double u_max = adaptive_noise_bound(scene.object, cfg.noise);
  SdfGrid eik_grad(scene.object.spec(), 1);
  double mask_pixels = 0.0;
  for (const auto& f : obs.frames)
    for (std::size_t c = 0; c < f.object_masks.size(); ++c)
      mask_pixels += static_cast<double>(f.object_masks[c].pixels.size() + f.hand_masks[c].pixels.size());

  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (it % cfg.noise_update_every == 0) {
      u_max = std::max(adaptive_noise_bound(scene.object, cfg.noise), cfg.sds_u_min);
      res.noise_bound.push_back(u_max);
    }
    SceneGradient g = SceneGradient::zeros(scene);
    double reproj = 0.0;
    const ObjectRays ob(scene.object, cfg.render);
    for (int t = 0; t < frames; ++t) {
      const ClipFrame& f = obs.frames[t];
      const HandRays hr(scene, skeleton, t, cfg.render);
      for (std::size_t c = 0; c < f.cameras.size(); ++c)
        reproj += reprojection_view(ob, hr, scene, t, f.cameras[c], f.object_masks[c], f.hand_masks[c],
                                    cfg.lambda_reprojection, g);
    }
    double loss = cfg.lambda_reprojection * reproj;

    std::ranges::fill(eik_grad.values(), 0.0);
    loss += cfg.lambda_eikonal * eikonal_loss(scene.object, &eik_grad);
    auto go = g.object.channel(0);
    const auto ge = eik_grad.channel(0);
    for (std::size_t i = 0; i < go.size(); ++i) go[i] += cfg.lambda_eikonal * ge[i];

    for (int t = 0; t + 1 < frames; ++t) {
      const PoseVector dp = scene.poses[t + 1].theta - scene.poses[t].theta;
      loss += cfg.lambda_smooth * dp.squaredNorm();
      g.poses[t + 1] += 2.0 * cfg.lambda_smooth * dp;
      g.poses[t] -= 2.0 * cfg.lambda_smooth * dp;
      const TransformDistance d = transform_distance(scene.transforms[t + 1], scene.transforms[t]);
      loss += cfg.lambda_smooth * d.value * d.value;
      const double k = 2.0 * cfg.lambda_smooth * d.value;
      g.translation[t + 1] += k * d.dt_a;
      g.translation[t] -= k * d.dt_a;
      g.rotation_tangent[t + 1] += k * d.dr_a;
      g.rotation_tangent[t] -= k * d.dr_a;
    }

    if (cfg.lambda_sds > 0.0) {
      // One frame per iteration, scaled so the expectation covers the clip.
      const int t = it % frames;
      const AssembledInteraction a = extract_frame_grid(scene, codec, skeleton, t);
      SdsResult sds = sds_gradient(a.grid.data, denoiser, schedule, condition,
                                   SdsOptions{cfg.sds_u_min, u_max, 1}, rng);
      const double scale = cfg.lambda_sds * frames;
      loss += scale * sds.loss;
      for (double& v : sds.gradient.values()) v *= scale;
      const InteractionGradient ig =
          interaction_vjp(codec, scene.object, scene.transforms[t], skeleton, a, sds.gradient, &g.object);
      g.poses[t] += ig.theta;
      g.translation[t] += Vec3(ig.transform[3], ig.transform[4], ig.transform[5]);
      g.rotation_tangent[t] += ig.rotation_tangent;
    }

    res.loss.push_back(loss);
    res.reprojection.push_back(reproj);
    if (!std::isfinite(loss)) fail(ErrorCode::DivergedOptimization, "reconstruction loss became non-finite");

    adam_obj.direction(g.object.values(), step_obj);
    auto ov = scene.object.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = truncate_sdf(ov[i] + step_obj[i]);
    for (int t = 0; t < frames; ++t) {
      FrameOptim& o = adam_frames[t];
      o.translation.direction(std::span<const double>(g.translation[t].data(), 3), step3);
      scene.transforms[t].translation += Vec3(step3[0], step3[1], step3[2]);
      o.rotation.direction(std::span<const double>(g.rotation_tangent[t].data(), 3), step3);
      scene.transforms[t].rotation =
          so3_log(so3_exp(Vec3(step3[0], step3[1], step3[2])) * scene.transforms[t].rotation_matrix());
      o.pose.direction(std::span<const double>(g.poses[t].data(), kPoseDofs),
                       std::span<double>(step_pose.data(), kPoseDofs));
      scene.poses[t].theta += step_pose;
      scene.poses[t] = scene.poses[t].clamped(skeleton.limits);
      if (!scene.poses[t].is_finite() || !scene.transforms[t].is_finite())
        fail(ErrorCode::DivergedOptimization, "reconstruction parameters became non-finite");
    }
    res.iterations = it + 1;

    const int w = cfg.plateau_window;
    if (res.iterations >= cfg.min_iterations && res.iterations >= 2 * w && res.iterations % w == 0) {
      const auto& r = res.reprojection;
      double prev = 0.0, cur = 0.0;
      for (int i = res.iterations - 2 * w; i < res.iterations - w; ++i) prev += r[i];
      for (int i = res.iterations - w; i < res.iterations; ++i) cur += r[i];
      if (prev - cur < std::max(cfg.plateau_tolerance * prev, cfg.plateau_floor * mask_pixels * w)) break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Metrics

ReconMetrics recon_metrics(const SceneParams& scene, const SceneParams& gt, const HandSkeleton& skeleton,
                           std::size_t samples, std::uint64_t seed) {
  require(scene.frames() == gt.frames(), ErrorCode::ShapeMismatch, "scene and ground truth differ in frame count");
  const TriMesh pm = marching_cubes(scene.object), gm = marching_cubes(gt.object);
  if (pm.empty()) fail(ErrorCode::EmptySurface, "reconstructed object has no surface");
  if (gm.empty()) fail(ErrorCode::EmptySurface, "ground-truth object has no surface");
  const auto pp = sample_surface(pm, samples, mix_seed(seed, 0));
  const auto gp = sample_surface(gm, samples, mix_seed(seed, 1));
  auto moved = [](TriMesh m, const auto& f) {
    for (auto& v : m.vertices) v = f(v);
    return m;
  };

  ReconMetrics m;
  const Similarity align = scaled_icp(pp, gp);
  const TriangleTree gt_tree(gm);
  const CloudComparison c = compare_surfaces(transformed(pp, align), TriangleTree(moved(pm, [&](const Vec3& v) { return align.apply(v); })),
                                             gp, gt_tree);
  m.chamfer_mm = 1e3 * c.chamfer;
  m.fscore_5 = c.fscore_5;
  m.fscore_10 = c.fscore_10;

  double cdh = 0.0;
  for (int t = 0; t < gt.frames(); ++t) {
    const RigidTransform& tp = scene.transforms[t];
    const RigidTransform& tg = gt.transforms[t];
    auto to_hand = [](const std::vector<Vec3>& pts, const RigidTransform& tr) {
      std::vector<Vec3> out;
      out.reserve(pts.size());
      for (const auto& p : pts) out.push_back(tr.apply(p));
      return out;
    };
    cdh += compare_surfaces(to_hand(pp, tp), TriangleTree(moved(pm, [&](const Vec3& v) { return tp.apply(v); })),
                            to_hand(gp, tg), TriangleTree(moved(gm, [&](const Vec3& v) { return tg.apply(v); })))
               .chamfer;
    const auto jp = forward_kinematics(skeleton, scene.poses[t]);
    const auto jg = forward_kinematics(skeleton, gt.poses[t]);
    double e = 0.0;
    for (int j = 0; j < kJoints; ++j) e += (jp[j] - jg[j]).norm();
    m.mpjpe_mm.push_back(1e3 * e / kJoints);
  }
  m.hand_frame_chamfer_mm = 1e3 * cdh / gt.frames();
  return m;
}

}  // namespace hop
