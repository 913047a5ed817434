#include "hop/config.hpp"

#include <fstream>
#include <set>

#include "hop/error.hpp"

namespace hop {

namespace {

[[noreturn]] void bad(const std::string& what) { fail(ErrorCode::InvalidConfig, what); }

template <class T>
T get(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) bad(std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(std::string("key '") + key + "' has the wrong type");
  }
}

// Uniform reflection over config fields so reading and writing cannot drift apart.
template <class F>
void visit(GraspConfig& c, F&& f) {
  f("mean_flexion", c.mean_flexion);
  f("init_translation_radius", c.init_translation_radius);
  f("iterations", c.iterations);
  f("lr_translation", c.lr_translation);
  f("lr_rotation", c.lr_rotation);
  f("lr_pose", c.lr_pose);
  f("sds_u_min", c.sds.u_min);
  f("sds_u_max", c.sds.u_max);
  f("sds_samples", c.sds.samples);
  f("freeze_transform", c.freeze_transform);
  f("loss_strata", c.loss_estimate.strata);
  f("loss_seeds", c.loss_estimate.seeds);
  f("refine_iterations", c.refine_iterations);
  f("lambda_contact", c.lambda_contact);
  f("lambda_penetration", c.lambda_penetration);
  f("lambda_reg", c.lambda_reg);
  f("contact_knee", c.contact_knee);
  f("refine_lr_translation", c.refine_lr_translation);
  f("refine_lr_rotation", c.refine_lr_rotation);
  f("refine_lr_pose", c.refine_lr_pose);
  f("sample_density", c.sample_density);
  f("contact_threshold", c.contact_threshold);
  f("metric_density", c.metric_density);
}

template <class F>
void visit(ReconConfig& c, F&& f) {
  f("lambda_reprojection", c.lambda_reprojection);
  f("lambda_eikonal", c.lambda_eikonal);
  f("lambda_smooth", c.lambda_smooth);
  f("lambda_sds", c.lambda_sds);
  f("max_iterations", c.max_iterations);
  f("min_iterations", c.min_iterations);
  f("plateau_window", c.plateau_window);
  f("plateau_tolerance", c.plateau_tolerance);
  f("plateau_floor", c.plateau_floor);
  f("noise_update_every", c.noise_update_every);
  f("sds_u_min", c.sds_u_min);
  f("noise_u_max", c.noise.u_max);
  f("noise_u_min", c.noise.u_min);
  f("noise_s_min", c.noise.s_min);
  f("noise_s_max", c.noise.s_max);
  f("lr_object", c.lr_object);
  f("lr_translation", c.lr_translation);
  f("lr_rotation", c.lr_rotation);
  f("lr_pose", c.lr_pose);
  f("init_box_half_size", c.init_box_half_size);
  f("render_tau", c.render.tau);
  f("render_cull_margin", c.render.cull_margin);
  f("seed", c.seed);
}

template <class C>
Json write_fields(const C& config) {
  Json j = Json::object();
  C copy = config;
  visit(copy, [&](const char* key, auto& v) { j[key] = v; });
  return j;
}

template <class C>
C read_fields(const Json& j) {
  if (!j.is_object()) bad("config must be a JSON object");
  C c;
  std::set<std::string> known;
  visit(c, [&](const char* key, auto& v) {
    known.insert(key);
    if (j.contains(key)) v = get<std::decay_t<decltype(v)>>(j, key);
  });
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) bad("unknown config key '" + k + "'");
  return c;
}

}  // namespace

Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) bad("expected a 3-vector");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) bad("3-vector entries must be numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

Json to_json(const RigidTransform& t) {
  return {{"rotation", to_json(t.rotation)}, {"translation", to_json(t.translation)}, {"scale", t.scale}};
}

RigidTransform transform_from_json(const Json& j) {
  RigidTransform t;
  t.rotation = vec3_from_json(j.at("rotation"));
  t.translation = vec3_from_json(j.at("translation"));
  if (j.contains("scale")) t.scale = get<double>(j, "scale");
  if (!t.is_finite() || !(t.scale > 0)) bad("transform must be finite with positive scale");
  return t;
}

Json to_json(const HandPose& p) {
  Json a = Json::array();
  for (int d = 0; d < kPoseDofs; ++d) a.push_back(p.theta[d]);
  return a;
}

HandPose pose_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kPoseDofs) bad("hand pose must be an array of 20 angles");
  HandPose p;
  for (int d = 0; d < kPoseDofs; ++d) {
    if (!j[d].is_number()) bad("hand pose entries must be numbers");
    p.theta[d] = j[d].get<double>();
  }
  if (!p.is_finite()) bad("hand pose must be finite");
  return p;
}

namespace {
const char* kind_name(ShapeDescriptor::Kind k) {
  switch (k) {
    case ShapeDescriptor::Kind::Sphere: return "sphere";
    case ShapeDescriptor::Kind::Capsule: return "capsule";
    case ShapeDescriptor::Kind::Box: return "box";
    case ShapeDescriptor::Kind::Cylinder: return "cylinder";
    case ShapeDescriptor::Kind::Torus: return "torus";
    case ShapeDescriptor::Kind::Union: return "union";
    case ShapeDescriptor::Kind::SmoothUnion: return "smooth_union";
  }
  return "?";
}
}  // namespace

Json to_json(const ShapeDescriptor& s) {
  Json j;
  j["kind"] = kind_name(s.kind);
  using K = ShapeDescriptor::Kind;
  switch (s.kind) {
    case K::Sphere: j["radius"] = s.radius; break;
    case K::Capsule:
    case K::Cylinder: j["radius"] = s.radius, j["half_length"] = s.half_length; break;
    case K::Box: j["half_sizes"] = to_json(s.half_sizes); break;
    case K::Torus: j["major_radius"] = s.major_radius, j["radius"] = s.radius; break;
    case K::SmoothUnion: j["sharpness"] = s.sharpness; [[fallthrough]];
    case K::Union: {
      Json c = Json::array();
      for (const auto& ch : s.children) c.push_back(to_json(ch));
      j["children"] = c;
      break;
    }
  }
  j["transform"] = to_json(s.transform);
  return j;
}

ShapeDescriptor shape_from_json(const Json& j) {
  if (!j.is_object()) bad("shape must be an object");
  const auto kind = get<std::string>(j, "kind");
  ShapeDescriptor s;
  using K = ShapeDescriptor::Kind;
  if (kind == "sphere") {
    s.kind = K::Sphere;
    s.radius = get<double>(j, "radius");
  } else if (kind == "capsule" || kind == "cylinder") {
    s.kind = kind == "capsule" ? K::Capsule : K::Cylinder;
    s.radius = get<double>(j, "radius");
    s.half_length = get<double>(j, "half_length");
  } else if (kind == "box") {
    s.kind = K::Box;
    s.half_sizes = vec3_from_json(j.at("half_sizes"));
  } else if (kind == "torus") {
    s.kind = K::Torus;
    s.major_radius = get<double>(j, "major_radius");
    s.radius = get<double>(j, "radius");
  } else if (kind == "union" || kind == "smooth_union") {
    s.kind = kind == "union" ? K::Union : K::SmoothUnion;
    if (s.kind == K::SmoothUnion) s.sharpness = get<double>(j, "sharpness");
    if (!j.contains("children") || !j["children"].is_array()) bad("CSG shape needs a children array");
    for (const auto& c : j["children"]) s.children.push_back(shape_from_json(c));
  } else {
    bad("unknown shape kind '" + kind + "'");
  }
  if (j.contains("transform")) s.transform = transform_from_json(j["transform"]);
  validate_shape(s);
  return s;
}

Json to_json(const HandSkeleton& s) {
  Json j;
  j["wrist"] = to_json(s.wrist);
  j["palm_normal"] = to_json(s.palm_normal);
  j["limits"] = {{"abduction", {s.limits.abduction_min, s.limits.abduction_max}},
                 {"flexion", {s.limits.flexion_min, s.limits.flexion_max}}};
  Json fingers = Json::array();
  for (const auto& f : s.fingers)
    fingers.push_back({{"name", f.name},
                       {"mcp_offset", to_json(f.mcp_offset)},
                       {"direction", to_json(f.direction)},
                       {"flexion_axis", to_json(f.flexion_axis)},
                       {"abduction_axis", to_json(f.abduction_axis)},
                       {"segment_lengths", f.segment_lengths},
                       {"radii", f.radii}});
  j["fingers"] = fingers;
  return j;
}

HandSkeleton skeleton_from_json(const Json& j) {
  HandSkeleton s = HandSkeleton::canonical();
  if (!j.is_object()) bad("skeleton must be an object");
  if (j.contains("wrist")) s.wrist = vec3_from_json(j["wrist"]);
  if (j.contains("palm_normal")) s.palm_normal = vec3_from_json(j["palm_normal"]);
  if (j.contains("limits")) {
    const auto ab = get<std::array<double, 2>>(j["limits"], "abduction");
    const auto fl = get<std::array<double, 2>>(j["limits"], "flexion");
    s.limits = {ab[0], ab[1], fl[0], fl[1]};
  }
  if (j.contains("fingers")) {
    const Json& fs = j["fingers"];
    if (!fs.is_array() || fs.size() != kFingers) bad("skeleton needs exactly 5 fingers");
    for (int i = 0; i < kFingers; ++i) {
      FingerConfig& f = s.fingers[i];
      const Json& fj = fs[i];
      f.name = get<std::string>(fj, "name");
      f.mcp_offset = vec3_from_json(fj.at("mcp_offset"));
      f.direction = vec3_from_json(fj.at("direction"));
      f.flexion_axis = vec3_from_json(fj.at("flexion_axis"));
      f.abduction_axis = vec3_from_json(fj.at("abduction_axis"));
      f.segment_lengths = get<std::array<double, 3>>(fj, "segment_lengths");
      f.radii = get<std::array<double, 4>>(fj, "radii");
    }
  }
  s.validate();
  return s;
}

Json to_json(const GraspParams& g) { return {{"transform", to_json(g.transform)}, {"pose", to_json(g.pose)}}; }

GraspParams grasp_from_json(const Json& j) {
  GraspParams g;
  if (!j.is_object() || !j.contains("transform") || !j.contains("pose")) bad("grasp needs transform and pose");
  g.transform = transform_from_json(j["transform"]);
  g.pose = pose_from_json(j["pose"]);
  return g;
}

Json to_json(const GraspMetrics& m) {
  return {{"max_depth_m", m.max_depth},     {"mean_depth_m", m.mean_depth}, {"volume_cm3", m.volume},
          {"contact_ratio", m.contact_ratio}, {"contact_area_cm2", m.contact_area}};
}

Json to_json(const GraspConfig& c) { return write_fields(c); }
GraspConfig grasp_config_from_json(const Json& j) { return read_fields<GraspConfig>(j); }
Json to_json(const ReconConfig& c) { return write_fields(c); }
ReconConfig recon_config_from_json(const Json& j) { return read_fields<ReconConfig>(j); }

Json to_json(const OrthoCamera& c) {
  return {{"direction", to_json(c.direction)}, {"up", to_json(c.up)},   {"center", to_json(c.center)},
          {"half_width", c.half_width},        {"resolution", c.resolution}};
}

OrthoCamera camera_from_json(const Json& j) {
  OrthoCamera c;
  c.direction = vec3_from_json(j.at("direction"));
  c.up = vec3_from_json(j.at("up"));
  if (!(c.direction.norm() > 0) || !(c.direction.cross(c.up).norm() > 0)) bad("camera direction and up must be independent");
  c.center = vec3_from_json(j.at("center"));
  c.half_width = get<double>(j, "half_width");
  c.resolution = get<int>(j, "resolution");
  if (!(c.half_width > 0) || c.resolution < 1) bad("camera extent and resolution must be positive");
  return c;
}

Json to_json(const SyntheticGraspSpec& s) {
  return {{"label", s.label},
          {"shape", to_json(s.shape)},
          {"recipe", {{"approach", to_json(s.recipe.approach)}, {"wrap", s.recipe.wrap}, {"spread", s.recipe.spread}}},
          {"seed", s.seed}};
}

SyntheticGraspSpec grasp_spec_from_json(const Json& j) {
  SyntheticGraspSpec s;
  s.label = get<std::string>(j, "label");
  s.shape = shape_from_json(j.at("shape"));
  if (j.contains("recipe")) {
    const Json& r = j["recipe"];
    if (r.contains("approach")) s.recipe.approach = vec3_from_json(r["approach"]);
    if (r.contains("wrap")) s.recipe.wrap = get<double>(r, "wrap");
    if (r.contains("spread")) s.recipe.spread = get<double>(r, "spread");
  }
  if (j.contains("seed")) s.seed = get<std::uint64_t>(j, "seed");
  if (!(s.recipe.approach.norm() > 0) || s.recipe.wrap < 0 || s.recipe.wrap > 1 || s.recipe.spread < 0 ||
      s.recipe.spread > 0.5)
    bad("grasp recipe out of range (wrap in [0,1], spread in [0,0.5], nonzero approach)");
  return s;
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    bad(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
}

void write_clip(const std::filesystem::path& dir, const ClipObservation& clip) {
  std::filesystem::create_directories(dir);
  Json j;
  j["format"] = "hop-clip";
  j["version"] = 1;
  j["grid"] = {{"dims", clip.spec.dims}, {"half_extent", clip.spec.half_extent}};
  Json frames = Json::array();
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    const ClipFrame& f = clip.frames[t];
    Json views = Json::array();
    for (std::size_t c = 0; c < f.cameras.size(); ++c) {
      char obj[64], hand[64];
      std::snprintf(obj, sizeof obj, "frame%03zu_view%zu_object.pgm", t, c);
      std::snprintf(hand, sizeof hand, "frame%03zu_view%zu_hand.pgm", t, c);
      write_pgm(dir / obj, f.object_masks[c]);
      write_pgm(dir / hand, f.hand_masks[c]);
      views.push_back({{"camera", to_json(f.cameras[c])}, {"object_mask", obj}, {"hand_mask", hand}});
    }
    frames.push_back({{"views", views},
                      {"initial_pose", to_json(clip.initial_poses[t])},
                      {"initial_transform", to_json(clip.initial_transforms[t])}});
  }
  j["frames"] = frames;
  write_json(dir / "manifest.json", j);
}

ClipObservation read_clip(const std::filesystem::path& manifest) {
  const Json j = read_json(manifest);
  ClipObservation clip;
  try {
    clip.spec.dims = j.at("grid").at("dims").get<std::array<int, 3>>();
    clip.spec.half_extent = j.at("grid").at("half_extent").get<double>();
    for (const auto& fj : j.at("frames")) {
      ClipFrame f;
      for (const auto& v : fj.at("views")) {
        f.cameras.push_back(camera_from_json(v.at("camera")));
        f.object_masks.push_back(read_pgm(manifest.parent_path() / v.at("object_mask").get<std::string>()));
        f.hand_masks.push_back(read_pgm(manifest.parent_path() / v.at("hand_mask").get<std::string>()));
      }
      clip.frames.push_back(std::move(f));
      clip.initial_poses.push_back(pose_from_json(fj.at("initial_pose")));
      clip.initial_transforms.push_back(transform_from_json(fj.at("initial_transform")));
    }
  } catch (const nlohmann::json::exception& e) {
    bad(manifest.string() + ": " + e.what());
  }
  if (!clip.spec.valid()) bad("clip grid is invalid");
  return clip;
}

void write_scene(const std::filesystem::path& dir, const std::string& stem, const SceneParams& scene) {
  std::filesystem::create_directories(dir);
  write_hopg(dir / (stem + "_object.hopg"), scene.object);
  Json frames = Json::array();
  for (int t = 0; t < scene.frames(); ++t)
    frames.push_back({{"pose", to_json(scene.poses[t])}, {"transform", to_json(scene.transforms[t])}});
  write_json(dir / (stem + ".json"), {{"object", stem + "_object.hopg"}, {"frames", frames}});
}

SceneParams read_scene(const std::filesystem::path& json_path) {
  const Json j = read_json(json_path);
  SceneParams s;
  s.object = read_hopg(json_path.parent_path() / get<std::string>(j, "object"));
  if (!j.contains("frames") || !j["frames"].is_array()) bad("scene needs a frames array");
  for (const auto& f : j["frames"]) {
    s.poses.push_back(pose_from_json(f.at("pose")));
    s.transforms.push_back(transform_from_json(f.at("transform")));
  }
  return s;
}

}  // namespace hop
