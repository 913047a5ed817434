#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "hop/config.hpp"
#include "hop/error.hpp"
#include "support.hpp"

using namespace hop;
namespace fs = std::filesystem;

namespace {

template <class F>
std::optional<ErrorCode> code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("config documents round trip and reject unknown keys") {
  GraspConfig g;
  g.iterations = 123;
  g.lr_pose = 0.5;
  CHECK(to_json(grasp_config_from_json(to_json(g))) == to_json(g));
  CHECK(to_json(grasp_config_from_json(Json::object())) == to_json(GraspConfig{}));
  CHECK(code_of([] { grasp_config_from_json(Json{{"iteratons", 3}}); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { grasp_config_from_json(Json{{"iterations", "many"}}); }) == ErrorCode::InvalidConfig);

  ReconConfig r;
  r.max_iterations = 77;
  r.render.cull_margin = 5.0;
  r.seed = 9;
  const ReconConfig back = recon_config_from_json(to_json(r));
  CHECK(back.max_iterations == 77);
  CHECK(back.render.cull_margin == 5.0);
  CHECK(back.seed == 9);
  CHECK(to_json(back) == to_json(r));
  CHECK(code_of([] { recon_config_from_json(Json{{"lambda_foo", 1.0}}); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("value documents round trip exactly") {
  std::mt19937_64 rng(1);
  for (int n = 0; n < 20; ++n) {
    const Vec3 v = test::random_vec(rng, -1, 1);
    CHECK(vec3_from_json(to_json(v)) == v);
    RigidTransform t;
    t.rotation = test::random_vec(rng, -1, 1);
    t.translation = test::random_vec(rng, -1, 1);
    const RigidTransform tb = transform_from_json(to_json(t));
    CHECK(tb.rotation == t.rotation);
    CHECK(tb.translation == t.translation);
    const HandPose p = test::random_pose(rng);
    CHECK(pose_from_json(to_json(p)).theta == p.theta);
  }
  const HandSkeleton s = HandSkeleton::canonical();
  CHECK(to_json(skeleton_from_json(to_json(s))) == to_json(s));

  const ShapeDescriptor shape = ShapeDescriptor::smooth_union(
      {ShapeDescriptor::capsule(0.03, 0.01), ShapeDescriptor::box(Vec3(0.01, 0.02, 0.03))}, 200.0);
  CHECK(to_json(shape_from_json(to_json(shape))) == to_json(shape));
  CHECK(code_of([] { shape_from_json(Json{{"kind", "blob"}}); }) == ErrorCode::InvalidConfig);

  OrthoCamera cam;
  cam.direction = Vec3(1, 2, 3).normalized();
  cam.resolution = 17;
  CHECK(to_json(camera_from_json(to_json(cam))) == to_json(cam));
}

TEST_CASE("json files") {
  const fs::path dir = fs::temp_directory_path() / "hop_config_json";
  fs::create_directories(dir);
  const Json j{{"a", 1}, {"b", {1.5, 2.5}}};
  write_json(dir / "x.json", j);
  CHECK(read_json(dir / "x.json") == j);
  CHECK(code_of([&] { read_json(dir / "missing.json"); }) == ErrorCode::IoFailure);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK(code_of([&] { read_json(dir / "bad.json"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("clip and scene round trip") {
  const fs::path dir = fs::temp_directory_path() / "hop_config_clip";
  fs::remove_all(dir);
  const HandSkeleton skel = HandSkeleton::canonical();
  SceneParams gt;
  gt.object = analytic_sdf(ShapeDescriptor::sphere(0.04), GridSpec::cube(32));
  RigidTransform t;
  t.translation = skel.palm_center() + Vec3(0, 0, 0.05);
  gt.poses.assign(2, HandPose::uniform_flexion(0.3));
  gt.transforms.assign(2, t);
  const ClipObservation clip = make_synthetic_clip(gt, skel, 1, 12);
  write_clip(dir, clip);
  const ClipObservation back = read_clip(dir / "manifest.json");
  REQUIRE(back.frames.size() == 2);
  CHECK(back.spec == clip.spec);
  for (std::size_t f = 0; f < 2; ++f) {
    CHECK(back.initial_poses[f].theta == clip.initial_poses[f].theta);
    CHECK(back.initial_transforms[f].translation == clip.initial_transforms[f].translation);
    REQUIRE(back.frames[f].cameras.size() == 3);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(to_json(back.frames[f].cameras[c]) == to_json(clip.frames[f].cameras[c]));
      // Masks are stored with 8 bits.
      for (std::size_t i = 0; i < back.frames[f].object_masks[c].pixels.size(); ++i) {
        CHECK(std::abs(back.frames[f].object_masks[c].pixels[i] - clip.frames[f].object_masks[c].pixels[i]) <= 0.5 / 255 + 1e-12);
        CHECK(std::abs(back.frames[f].hand_masks[c].pixels[i] - clip.frames[f].hand_masks[c].pixels[i]) <= 0.5 / 255 + 1e-12);
      }
    }
  }

  write_scene(dir, "gt", gt);
  const SceneParams s = read_scene(dir / "gt.json");
  REQUIRE(s.object.spec() == gt.object.spec());
  for (std::size_t i = 0; i < gt.object.size(); ++i)
    CHECK(s.object.values()[i] == static_cast<double>(static_cast<float>(gt.object.values()[i])));
  CHECK(s.poses[1].theta == gt.poses[1].theta);
  CHECK(s.transforms[0].translation == gt.transforms[0].translation);
  CHECK(code_of([&] { read_clip(dir / "none.json"); }) == ErrorCode::IoFailure);
}

}  // TEST_SUITE
