#include "hop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "hop/config.hpp"
#include "hop/error.hpp"
#include "hop/grasp.hpp"
#include "hop/parallel.hpp"

namespace hop {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Rotation taking unit vector a onto unit vector b.
Mat3 align(const Vec3& a, const Vec3& b) {
  const Vec3 axis = a.cross(b);
  const double s = axis.norm(), c = a.dot(b);
  if (s < 1e-12) {
    if (c > 0) return Mat3::Identity();
    Vec3 perp = std::abs(a.x()) < 0.9 ? Vec3::UnitX().cross(a) : Vec3::UnitY().cross(a);
    return rotation_about(perp.normalized(), std::numbers::pi);
  }
  return rotation_about(axis / s, std::atan2(s, c));
}

ShapeDescriptor placed(const ShapeDescriptor& shape, const RigidTransform& t) {
  ShapeDescriptor out = shape;
  out.transform = t.compose(shape.transform);
  return out;
}

double min_distance(const ShapeDescriptor& shape, std::span<const SurfaceSample> samples) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) d = std::min(d, shape_distance(shape, s.position));
  return d;
}

std::vector<Capsule> finger_capsules(const HandKinematics& kin, int finger) {
  return {kin.capsules.begin() + kBonesPerFinger * finger + 1, kin.capsules.begin() + kBonesPerFinger * (finger + 1)};
}

struct FingerChoice {
  double mcp = 0.0, curl = 0.0;
  double penetration = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
};

// Curls one finger until its pad reaches the surface, trying a range of MCP
// angles and keeping the least penetrating closure.
FingerChoice close_finger(const HandSkeleton& skeleton, HandPose pose, int finger, const ShapeDescriptor& shape,
                          double wrap) {
  const JointLimits& lim = skeleton.limits;
  const int base = kDofsPerFinger * finger;
  auto set = [&](double m, double c) {
    pose.theta[base + 1] = m;
    pose.theta[base + 2] = std::clamp(c * wrap, lim.flexion_min, lim.flexion_max);
    pose.theta[base + 3] = std::clamp(c * wrap, lim.flexion_min, lim.flexion_max);
  };
  auto pad_distance = [&](double m, double c) {
    set(m, c);
    const HandKinematics kin = pose_hand(skeleton, pose);
    return shape_distance(shape, contact_points(skeleton, kin)[finger].position);
  };
  auto penetration = [&](double m, double c) {
    set(m, c);
    const HandKinematics kin = pose_hand(skeleton, pose);
    const auto caps = finger_capsules(kin, finger);
    return std::max(0.0, -min_distance(shape, capsule_surface_samples(caps, 4.0)));
  };

  FingerChoice best;
  FingerChoice fallback;
  const double m_hi = std::min(1.6, lim.flexion_max);
  const int m_steps = 16;
  const double c_step = 0.05;
  for (int a = 0; a <= m_steps; ++a) {
    const double m = lim.flexion_min + (m_hi - lim.flexion_min) * a / m_steps;
    double c_lo = lim.flexion_min, d_lo = pad_distance(m, c_lo);
    if (d_lo <= 0) continue;
    bool bracketed = false;
    double c_hi = c_lo;
    for (double c = c_lo + c_step; c <= lim.flexion_max + 1e-12; c += c_step) {
      const double d = pad_distance(m, c);
      if (d <= 0) {
        c_hi = c;
        bracketed = true;
        break;
      }
      if (d < fallback.gap) {
        const double pen = penetration(m, c);
        if (pen == 0.0) fallback = {m, c, 0.0, d};
      }
      c_lo = c;
    }
    if (!bracketed) continue;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (c_lo + c_hi);
      (pad_distance(m, mid) > 0 ? c_lo : c_hi) = mid;
    }
    const double pen = penetration(m, c_hi);
    if (pen < best.penetration - 1e-6) best = {m, c_hi, pen, 0.0};
  }
  if (std::isfinite(best.penetration) && best.penetration < 0.002) return best;
  if (std::isfinite(fallback.gap)) return fallback;
  return best;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) h = (h ^ b) * 1099511628211ull;
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

double hand_span(const HandSkeleton& skeleton) {
  const HandKinematics kin = pose_hand(skeleton, HandPose::zero());
  double span = 0.0;
  for (int a = 0; a < kFingers; ++a)
    for (int b = a + 1; b < kFingers; ++b) span = std::max(span, (kin.tips[a] - kin.tips[b]).norm());
  return span;
}

SceneParams make_grasp_scene(const SyntheticGraspSpec& grasp_spec, const GraspSample& sample, int frames,
                             const GridSpec& spec) {
  require(frames >= 1, ErrorCode::InvalidArgument, "a clip needs at least one frame");
  SceneParams scene;
  scene.object = analytic_sdf(grasp_spec.shape, spec);
  for (int t = 0; t < frames; ++t) {
    HandPose p = sample.pose;
    for (int d = 0; d < kPoseDofs; ++d)
      if (!HandPose::is_abduction(d)) p.theta[d] += 0.02 * std::sin(0.7 * t + 0.3 * d);
    scene.poses.push_back(p.clamped(JointLimits{}));
    scene.transforms.push_back(sample.transform);
  }
  return scene;
}

SyntheticGraspSpec make_family_spec(const std::string& family, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  SyntheticGraspSpec s;
  s.label = family;
  s.seed = seed;
  s.recipe.wrap = uniform(rng, 0.8, 1.0);
  s.recipe.spread = uniform(rng, 0.05, 0.15);
  const RigidTransform along_x{Vec3(0.0, std::numbers::pi / 2, 0.0), Vec3::Zero(), 1.0};
  if (family == "sphere-like") {
    s.shape = ShapeDescriptor::sphere(uniform(rng, 0.032, 0.045));
  } else if (family == "cylinder-like") {
    s.shape = ShapeDescriptor::cylinder(uniform(rng, 0.024, 0.034), uniform(rng, 0.045, 0.06), along_x);
  } else if (family == "handle-like") {
    const double r = uniform(rng, 0.016, 0.022);
    const double half = uniform(rng, 0.035, 0.05);
    const double head = uniform(rng, 0.022, 0.03);
    const RigidTransform head_at{Vec3::Zero(), Vec3(half + 0.8 * head, 0.0, 0.0), 1.0};
    s.shape = ShapeDescriptor::smooth_union(
        {ShapeDescriptor::capsule(half, r, along_x), ShapeDescriptor::box(Vec3::Constant(head), head_at)}, 300.0);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown shape family '" + family + "'");
  }
  return s;
}

std::vector<SyntheticGraspSpec> default_specs(int count, std::uint64_t seed) {
  require(count >= 0, ErrorCode::InvalidArgument, "spec count must be >= 0");
  std::vector<SyntheticGraspSpec> specs;
  for (int i = 0; i < count; ++i)
    specs.push_back(make_family_spec(kShapeFamilies[i % kShapeFamilies.size()], mix_seed(seed, i)));
  return specs;
}

GraspSample generate_grasp_sample(const SyntheticGraspSpec& spec, const HandSkeleton& skeleton, const Codec& codec,
                                  const GenerationOptions& options) {
  validate_shape(spec.shape);
  const GraspRecipe& r = spec.recipe;
  if (!(r.approach.norm() > 0) || !(r.wrap >= 0 && r.wrap <= 1) || !(r.spread >= 0 && r.spread <= 0.5))
    fail(ErrorCode::InvalidArgument, "grasp recipe out of range");
  const auto bounds = shape_bounds(spec.shape);
  const double min_extent = (bounds[1] - bounds[0]).minCoeff();
  const double span = hand_span(skeleton);
  if (min_extent > span) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "object is %.3f m across at its narrowest, wider than the hand span %.3f m",
                  min_extent, span);
    fail(ErrorCode::GenerationFailed, msg);
  }

  const Vec3 center = 0.5 * (bounds[0] + bounds[1]);
  const Mat3 to_palm = align(r.approach.normalized(), -Vec3::UnitZ());
  const HandKinematics rest = pose_hand(skeleton, HandPose::zero());
  double mcp_y = 0.0;
  for (int f = 1; f < kFingers; ++f) mcp_y += rest.joints[3 * f].y() / (kFingers - 1);
  const Vec3 palm = skeleton.palm_center();
  const Vec3 target(palm.x(), 0.5 * (palm.y() + mcp_y), 0.0);
  GraspConfig metric_config;
  metric_config.contact_threshold = options.contact_threshold;

  for (int attempt = 0; attempt < options.max_retries; ++attempt) {
    std::mt19937_64 rng(mix_seed(spec.seed, attempt));
    const Mat3 roll = rotation_about(Vec3::UnitZ(), uniform(rng, -0.3, 0.3));
    RigidTransform t;
    t.rotation = so3_log(roll * to_palm);
    const Vec3 jitter(uniform(rng, -0.004, 0.004), uniform(rng, -0.004, 0.004), 0.0);
    const Vec3 xy = target + jitter - t.rotation_matrix() * center;

    HandPose pose;
    const double fan[kFingers] = {0.5, -1.0, 0.0, 1.0, 1.5};
    for (int f = 0; f < kFingers; ++f)
      pose.theta[kDofsPerFinger * f] = fan[f] * r.spread + uniform(rng, -0.03, 0.03);
    pose = pose.clamped(skeleton.limits);

    // Lower the object until it rests on the open hand.
    const auto open = hand_surface_samples(pose_hand(skeleton, pose), 2.0);
    auto clearance = [&](double h) {
      t.translation = xy + Vec3(0.0, 0.0, h);
      return min_distance(placed(spec.shape, t), open);
    };
    double lo = -0.1, hi = 0.2;
    for (int it = 0; it < 50; ++it) {
      const double mid = 0.5 * (lo + hi);
      (clearance(mid) < -0.0003 ? lo : hi) = mid;
    }
    t.translation = xy + Vec3(0.0, 0.0, hi);
    const ShapeDescriptor in_hand = placed(spec.shape, t);

    for (int f = 0; f < kFingers; ++f) {
      const FingerChoice c = close_finger(skeleton, pose, f, in_hand, r.wrap);
      if (!std::isfinite(c.penetration)) continue;
      pose.theta[kDofsPerFinger * f + 1] = c.mcp;
      pose.theta[kDofsPerFinger * f + 2] = std::clamp(c.curl * r.wrap, skeleton.limits.flexion_min,
                                                      skeleton.limits.flexion_max);
      pose.theta[kDofsPerFinger * f + 3] = pose.theta[kDofsPerFinger * f + 2];
    }

    const SdfGrid grid = analytic_sdf(in_hand, options.spec);
    const GraspMetrics m = capsule_metrics(pose_hand(skeleton, pose).capsules, grid, RigidTransform::identity(),
                                           metric_config);
    if (m.contact_ratio < 1.0 || !(m.max_depth < options.max_penetration)) continue;

    GraspSample out;
    out.object_in_hand = grid;
    out.pose = pose;
    out.transform = t;
    out.grid = assemble_interaction_grid(codec.encode(grid), skeleton, pose);
    out.attempts = attempt + 1;
    return out;
  }
  fail(ErrorCode::GenerationFailed,
       "no grasp with full contact and penetration below the limit after " + std::to_string(options.max_retries) +
           " attempts (label '" + spec.label + "')");
}

DatasetManifest build_dataset(const std::vector<SyntheticGraspSpec>& specs, const std::filesystem::path& out_dir,
                              const HandSkeleton& skeleton, const Codec& codec, const GenerationOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  for (const auto& s : specs)
    if (std::ranges::find(manifest.labels, s.label) == manifest.labels.end()) manifest.labels.push_back(s.label);
  manifest.entries.resize(specs.size());
  std::vector<std::string> errors(specs.size());
  std::vector<ErrorCode> codes(specs.size(), ErrorCode::GenerationFailed);

  parallel_for(specs.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t n = begin; n < end; ++n) {
      try {
        const GraspSample g = generate_grasp_sample(specs[n], skeleton, codec, options);
        char grid_name[32], object_name[32];
        std::snprintf(grid_name, sizeof grid_name, "grasp_%05zu.hopg", n);
        std::snprintf(object_name, sizeof object_name, "object_%05zu.hopg", n);
        write_hopg(out_dir / grid_name, g.grid.data);
        write_hopg(out_dir / object_name, g.object_in_hand);
        manifest.entries[n] = {grid_name, object_name, specs[n].label, specs[n].seed, g.pose, g.transform,
                               specs[n].shape};
      } catch (const Error& e) {
        errors[n] = e.what();
        codes[n] = e.code();
      }
    }
  });
  for (std::size_t n = 0; n < specs.size(); ++n)
    if (!errors[n].empty()) fail(codes[n], "spec " + std::to_string(n) + ": " + errors[n]);
  write_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  Json j;
  j["format"] = "hop-dataset";
  j["version"] = manifest.version;
  j["labels"] = manifest.labels;
  Json entries = Json::array();
  const auto dir = path.parent_path();
  for (const auto& e : manifest.entries) {
    Json je;
    je["grid"] = e.grid_file;
    je["grid_checksum"] = hex(fnv1a(read_bytes(dir / e.grid_file)));
    je["object"] = e.object_file;
    je["object_checksum"] = hex(fnv1a(read_bytes(dir / e.object_file)));
    je["label"] = e.label;
    je["seed"] = e.seed;
    je["pose"] = to_json(e.pose);
    je["transform"] = to_json(e.transform);
    je["shape"] = to_json(e.shape);
    entries.push_back(je);
  }
  j["entries"] = entries;
  write_json(path, j);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const Json j = read_json(path);
  DatasetManifest m;
  try {
    if (j.at("format").get<std::string>() != "hop-dataset") fail(ErrorCode::InvalidConfig, "not a dataset manifest");
    m.version = j.at("version").get<int>();
    m.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.grid_file = je.at("grid").get<std::string>();
      e.object_file = je.at("object").get<std::string>();
      e.label = je.at("label").get<std::string>();
      e.seed = je.at("seed").get<std::uint64_t>();
      e.pose = pose_from_json(je.at("pose"));
      e.transform = transform_from_json(je.at("transform"));
      e.shape = shape_from_json(je.at("shape"));
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  if (m.version != 1) fail(ErrorCode::InvalidConfig, "unsupported manifest version " + std::to_string(m.version));
  return m;
}

std::vector<std::string> validate_manifest(const std::filesystem::path& path) {
  std::vector<std::string> problems;
  Json j;
  DatasetManifest m;
  try {
    j = read_json(path);
    m = read_manifest(path);
  } catch (const Error& e) {
    return {e.what()};
  }
  const auto dir = path.parent_path();
  const Json& entries = j["entries"];
  for (std::size_t n = 0; n < m.entries.size(); ++n) {
    const auto& e = m.entries[n];
    const std::string where = "entry " + std::to_string(n) + ": ";
    if (std::ranges::find(m.labels, e.label) == m.labels.end())
      problems.push_back(where + "label '" + e.label + "' is not registered");
    const std::pair<std::string, const char*> files[] = {{e.grid_file, "grid_checksum"},
                                                          {e.object_file, "object_checksum"}};
    for (const auto& [file, key] : files) {
      const auto p = dir / file;
      if (!std::filesystem::exists(p)) {
        problems.push_back(where + "missing file " + file);
        continue;
      }
      try {
        const auto bytes = read_bytes(p);
        if (!entries[n].contains(key) || entries[n][key] != hex(fnv1a(bytes)))
          problems.push_back(where + "checksum mismatch for " + file);
        const VoxelGrid g = decode_hopg(bytes);
        if (file == e.grid_file && g.channels() != kInteractionChannels)
          problems.push_back(where + file + " does not have " + std::to_string(kInteractionChannels) + " channels");
      } catch (const Error& err) {
        problems.push_back(where + file + ": " + err.what());
      }
    }
  }
  return problems;
}

std::vector<LabeledGrid> load_dataset_grids(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  std::vector<LabeledGrid> out;
  for (const auto& e : m.entries) {
    const auto it = std::ranges::find(m.labels, e.label);
    if (it == m.labels.end()) fail(ErrorCode::UnknownCondition, "label '" + e.label + "' is not registered");
    VoxelGrid g = read_hopg(manifest_path.parent_path() / e.grid_file);
    validate_interaction_grid({g});
    out.push_back({std::move(g), static_cast<int>(it - m.labels.begin())});
  }
  if (out.empty()) fail(ErrorCode::EmptyDataset, "dataset has no entries");
  return out;
}

}  // namespace hop
