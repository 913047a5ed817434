#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "hop/error.hpp"
#include "hop/sdf_geometry.hpp"
#include "support.hpp"

using namespace hop;
using hop::test::uniform;

namespace {

// Distance to an axis-aligned box, inside distance taken face by face.
double box_oracle(const Vec3& p, const Vec3& h) {
  const Vec3 q = p.cwiseAbs();
  if ((q.array() <= h.array()).all()) {
    double d = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) d = std::min(d, h[a] - q[a]);
    return -d;
  }
  Vec3 nearest;
  for (int a = 0; a < 3; ++a) nearest[a] = std::clamp(p[a], -h[a], h[a]);
  return (p - nearest).norm();
}

// Point-triangle distance by projecting onto the plane, falling back to edges.
double triangle_oracle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const Vec3 proj = p - n * (p - a).dot(n) / n.squaredNorm();
  const double s0 = (b - a).cross(proj - a).dot(n), s1 = (c - b).cross(proj - b).dot(n),
               s2 = (a - c).cross(proj - c).dot(n);
  if (s0 >= 0 && s1 >= 0 && s2 >= 0) return (p - proj).norm();
  auto seg = [&](const Vec3& u, const Vec3& v) {
    const double t = std::clamp((p - u).dot(v - u) / (v - u).squaredNorm(), 0.0, 1.0);
    return (p - (u + t * (v - u))).norm();
  };
  return std::min({seg(a, b), seg(b, c), seg(c, a)});
}

}  // namespace

TEST_SUITE("sdf_geometry") {

TEST_CASE("grid lattice conventions") {
  const GridSpec s = GridSpec::cube(64);
  CHECK(s.center_normalized(0, 0) == doctest::Approx(-1.0 + 1.0 / 64));
  CHECK(s.center(63, 0, 0).x() == doctest::Approx(0.15 * (1.0 - 1.0 / 64)));
  CHECK(s.index(1, 0, 0) == 1);
  CHECK(s.index(0, 1, 0) == 64);
  CHECK(s.index(0, 0, 1) == 64 * 64);
  CHECK_FALSE(GridSpec::cube(1).valid());
  CHECK_FALSE(GridSpec::cube(8, 0.0).valid());
}

TEST_CASE("HOPG round trip is bit exact and rejects corrupt files") {
  VoxelGrid g = test::smooth_grid(GridSpec{{4, 5, 6}, 0.2}, 3, 7);
  quantize_to_float(g);
  const auto bytes = encode_hopg(g);
  REQUIRE(bytes.size() == 28 + 4 * g.size());
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HOPG");
  const VoxelGrid back = decode_hopg(bytes);
  CHECK(back == g);
  CHECK(encode_hopg(back) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_hopg(bad_magic), Error);
  auto truncated = bytes;
  truncated.pop_back();
  try {
    decode_hopg(truncated);
    FAIL("expected IoFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoFailure);
  }

  const auto path = std::filesystem::temp_directory_path() / "hop_test_roundtrip.hopg";
  write_hopg(path, g);
  CHECK(read_hopg(path) == g);
  std::filesystem::remove(path);
}

TEST_CASE("analytic primitives") {
  const GridSpec s = GridSpec::cube(65);
  const SdfGrid sphere = analytic_sdf(ShapeDescriptor::sphere(0.05), s);
  CHECK(sphere.at(0, 32, 32, 32) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));

  const auto a = ShapeDescriptor::sphere(0.03, Vec3(-0.06, 0, 0));
  const auto b = ShapeDescriptor::sphere(0.03, Vec3(0.06, 0, 0));
  const SdfGrid ga = analytic_sdf(a, s), gb = analytic_sdf(b, s), gu = analytic_sdf(ShapeDescriptor::make_union({a, b}), s);
  for (std::size_t i = 0; i < gu.size(); ++i) REQUIRE(gu.values()[i] == std::min(ga.values()[i], gb.values()[i]));

  const Vec3 h = Vec3::Constant(0.05);
  const SdfGrid box = analytic_sdf(ShapeDescriptor::box(h), s);
  std::mt19937_64 rng(3);
  for (int n = 0; n < 500; ++n) {
    const int i = rng() % 65, j = rng() % 65, k = rng() % 65;
    const double want = truncate_sdf(box_oracle(s.center(i, j, k), h) / s.half_extent);
    REQUIRE(std::abs(box.at(0, i, j, k) - want) < 1e-9);
  }
}

TEST_CASE("rotated capsule, cylinder and torus agree with their definitions") {
  std::mt19937_64 rng(11);
  const RigidTransform t{Vec3(0.3, -0.5, 0.2), Vec3(0.01, 0.02, -0.01), 1.0};
  const auto cap = ShapeDescriptor::capsule(0.04, 0.02, t);
  const auto cyl = ShapeDescriptor::cylinder(0.03, 0.04, t);
  const auto tor = ShapeDescriptor::torus(0.05, 0.015, t);
  for (int n = 0; n < 200; ++n) {
    const Vec3 p = test::random_vec(rng, -0.12, 0.12);
    const Vec3 l = t.apply_inverse(p);
    const double tz = std::clamp(l.z(), -0.04, 0.04);
    CHECK(shape_distance(cap, p) == doctest::Approx((l - Vec3(0, 0, tz)).norm() - 0.02).epsilon(1e-9));
    const double radial = std::hypot(l.x(), l.y()) - 0.03, axial = std::abs(l.z()) - 0.04;
    const double cyl_want = std::min(std::max(radial, axial), 0.0) + std::hypot(std::max(radial, 0.0), std::max(axial, 0.0));
    CHECK(shape_distance(cyl, p) == doctest::Approx(cyl_want).epsilon(1e-9));
    const double ring = std::hypot(std::hypot(l.x(), l.y()) - 0.05, l.z()) - 0.015;
    CHECK(shape_distance(tor, p) == doctest::Approx(ring).epsilon(1e-9));
  }
}

TEST_CASE("smooth union blends below the plain union") {
  const auto a = ShapeDescriptor::sphere(0.03, Vec3(-0.02, 0, 0));
  const auto b = ShapeDescriptor::sphere(0.03, Vec3(0.02, 0, 0));
  const auto s = ShapeDescriptor::smooth_union({a, b}, 200.0);
  const auto u = ShapeDescriptor::make_union({a, b});
  for (double x : {-0.08, 0.0, 0.01, 0.07}) {
    const Vec3 p(x, 0.01, 0);
    CHECK(shape_distance(s, p) <= shape_distance(u, p) + 1e-12);
    CHECK(shape_distance(s, p) >= shape_distance(u, p) - std::log(2.0) / 200.0 - 1e-12);
  }
}

TEST_CASE("invalid shapes are rejected") {
  auto code_of = [](const ShapeDescriptor& s) {
    try {
      validate_shape(s);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of(ShapeDescriptor::sphere(-0.01)) == ErrorCode::InvalidShape);
  CHECK(code_of(ShapeDescriptor::box(Vec3(0.1, 0.0, 0.1))) == ErrorCode::InvalidShape);
  CHECK(code_of(ShapeDescriptor::make_union({})) == ErrorCode::InvalidShape);
  ShapeDescriptor deep = ShapeDescriptor::sphere(0.01);
  for (int d = 0; d < 9; ++d) deep = ShapeDescriptor::make_union({deep});
  CHECK(code_of(deep) == ErrorCode::InvalidShape);
  CHECK_THROWS_AS(analytic_sdf(ShapeDescriptor::sphere(0.0), GridSpec::cube(8)), Error);
}

TEST_CASE("truncation is idempotent and bounded") {
  for (double v : {-3.0, -1.0, -0.2, 0.0, 0.7, 1.0, 5.0}) {
    CHECK(truncate_sdf(truncate_sdf(v)) == truncate_sdf(v));
    CHECK(std::abs(truncate_sdf(v)) <= 1.0);
  }
}

TEST_CASE("mesh_to_sdf matches the analytic sphere") {
  const GridSpec s = GridSpec::cube(64);
  const double voxel = s.pitch(0);
  const TriMesh ico = make_icosphere(3, 0.05);
  REQUIRE(ico.valid());
  const SdfGrid g = mesh_to_sdf(ico, s);
  const SdfGrid ref = analytic_sdf(ShapeDescriptor::sphere(0.05), s);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g.values()[i] - ref.values()[i]));
  CHECK(worst * s.half_extent < voxel);

  const MeshSdfQuery q(ico);
  std::mt19937_64 rng(5);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p = test::random_vec(rng, -0.12, 0.12);
    CHECK(std::abs(q.signed_distance(p) - (p.norm() - 0.05)) < 0.25 * voxel);
  }
}

TEST_CASE("mesh_to_sdf of a cube and outside probes") {
  const GridSpec s = GridSpec::cube(65);
  const TriMesh cube = make_box_mesh(Vec3::Constant(0.05));
  const SdfGrid g = mesh_to_sdf(cube, s);
  CHECK(g.at(0, 32, 32, 32) == doctest::Approx(-1.0 / 3.0).epsilon(1e-9));

  const MeshSdfQuery q(cube);
  std::mt19937_64 rng(9);
  for (int n = 0; n < 50; ++n) {
    Vec3 p = test::random_vec(rng, -0.14, 0.14);
    p[n % 3] = (n % 2 ? 1 : -1) * uniform(rng, 0.06, 0.14);
    double want = std::numeric_limits<double>::infinity();
    for (const auto& f : cube.faces)
      want = std::min(want, triangle_oracle(p, cube.vertices[f[0]], cube.vertices[f[1]], cube.vertices[f[2]]));
    CHECK(q.signed_distance(p) == doctest::Approx(want).epsilon(1e-9));
  }
  CHECK_THROWS_AS(mesh_to_sdf(TriMesh{}, s), Error);
}

TEST_CASE("point_triangle_distance agrees with a projection oracle") {
  std::mt19937_64 rng(21);
  for (int n = 0; n < 300; ++n) {
    const Vec3 a = test::random_vec(rng, -1, 1), b = test::random_vec(rng, -1, 1), c = test::random_vec(rng, -1, 1);
    const Vec3 p = test::random_vec(rng, -2, 2);
    CHECK(point_triangle_distance(p, a, b, c) == doctest::Approx(triangle_oracle(p, a, b, c)).epsilon(1e-9));
  }
}

TEST_CASE("trilinear sampling") {
  const GridSpec s = GridSpec::cube(16);
  VoxelGrid ramp(s, 1);
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) ramp.at(0, i, j, k) = s.center_normalized(i, j, k).x();
  const TrilinearSample at_center = sample_trilinear(ramp, 0, s.center_normalized(3, 4, 5));
  CHECK(at_center.value == ramp.at(0, 3, 4, 5));

  std::mt19937_64 rng(1);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p = test::random_vec(rng, -0.9, 0.9);
    const TrilinearSample t = sample_trilinear(ramp, 0, p);
    CHECK(t.value == doctest::Approx(p.x()).epsilon(1e-12));
    CHECK(t.gradient.x() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(t.gradient.y()) < 1e-12);
    CHECK(std::abs(t.gradient.z()) < 1e-12);
  }

  // Outside the lattice the value clamps and the outward gradient vanishes.
  const TrilinearSample out = sample_trilinear(ramp, 0, Vec3(1.5, 0.0, 0.0));
  CHECK(out.value == doctest::Approx(s.center_normalized(0, 15)));
  CHECK(out.gradient.x() == 0.0);
}

TEST_CASE("trilinear gradient matches central differences") {
  const VoxelGrid g = test::smooth_grid(GridSpec::cube(16), 1, 4);
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  int checked = 0;
  while (checked < 100) {
    const Vec3 p = test::random_vec(rng, -0.9, 0.9);
    // Skip points within a step of a cell face, where the interpolant has a kink.
    bool near_face = false;
    for (int a = 0; a < 3; ++a) {
      const double u = (p[a] + 1.0) * 8.0 - 0.5;
      near_face |= std::abs(u - std::round(u)) < 1e-4;
    }
    if (near_face) continue;
    const Vec3 grad = sample_trilinear(g, 0, p).gradient;
    for (int a = 0; a < 3; ++a) {
      Vec3 dp = Vec3::Zero();
      dp[a] = h;
      const double fd = (sample_trilinear(g, 0, p + dp).value - sample_trilinear(g, 0, p - dp).value) / (2 * h);
      CHECK(test::rel_err(grad[a], fd, 1e-3) < 1e-4);
    }
    ++checked;
  }
}

TEST_CASE("sample_trilinear_all agrees with per-channel sampling") {
  const VoxelGrid g = test::smooth_grid(GridSpec::cube(8), 4, 12);
  std::vector<double> v(4);
  std::vector<Vec3> gr(4);
  const Vec3 p(0.13, -0.41, 0.77);
  sample_trilinear_all(g, p, v, gr);
  for (int c = 0; c < 4; ++c) {
    const TrilinearSample s = sample_trilinear(g, c, p);
    CHECK(v[c] == doctest::Approx(s.value).epsilon(1e-14));
    CHECK((gr[c] - s.gradient).norm() < 1e-12);
  }
}

TEST_CASE("resampling under lattice-aligned transforms") {
  const GridSpec s = GridSpec::cube(16);
  const SdfGrid g = test::smooth_grid(s, 1, 3);
  const SdfGrid same = resample_under_transform(g, RigidTransform::identity());
  for (int k = 1; k < 15; ++k)
    for (int j = 1; j < 15; ++j)
      for (int i = 1; i < 15; ++i) REQUIRE(same.at(0, i, j, k) == doctest::Approx(g.at(0, i, j, k)).epsilon(1e-12));

  const RigidTransform shift{Vec3::Zero(), Vec3(s.pitch(0), 0, 0), 1.0};
  const SdfGrid shifted = resample_under_transform(g, shift);
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j) {
      CHECK(shifted.at(0, 0, j, k) == doctest::Approx(g.at(0, 0, j, k)).epsilon(1e-12));
      for (int i = 1; i < 16; ++i) REQUIRE(shifted.at(0, i, j, k) == doctest::Approx(g.at(0, i - 1, j, k)).epsilon(1e-12));
    }

  // Rotation by 90 degrees about z: out(x, y) = in(y, -x).
  const RigidTransform rot{Vec3(0, 0, std::numbers::pi / 2), Vec3::Zero(), 1.0};
  const SdfGrid r = resample_under_transform(g, rot);
  for (int k = 1; k < 15; ++k)
    for (int j = 1; j < 15; ++j)
      for (int i = 1; i < 15; ++i) REQUIRE(std::abs(r.at(0, i, j, k) - g.at(0, j, 15 - i, k)) < 1e-6);
}

TEST_CASE("resampling with a transform and its inverse is close to identity") {
  const GridSpec s = GridSpec::cube(32);
  const SdfGrid g = analytic_sdf(ShapeDescriptor::sphere(0.06, Vec3(0.01, -0.01, 0.0)), s);
  const RigidTransform t{Vec3(0.2, -0.3, 0.25), Vec3(0.01, 0.004, -0.006), 1.0};
  const SdfGrid back = resample_under_transform(resample_under_transform(g, t), t.inverse());
  double worst = 0.0;
  for (int k = 6; k < 26; ++k)
    for (int j = 6; j < 26; ++j)
      for (int i = 6; i < 26; ++i)
        if ((s.center(i, j, k) - Vec3(0.01, -0.01, 0.0)).norm() > 3 * s.pitch(0))
          worst = std::max(worst, std::abs(back.at(0, i, j, k) - g.at(0, i, j, k)));
  // Two interpolations, each within 3 h^2 / 8 times the curvature bound.
  const double h = s.pitch_normalized(0), curvature = 1.0 / (3 * h);
  CHECK(worst < 2.0 * 3.0 * h * h / 8.0 * curvature);
}

TEST_CASE("scaled resampling multiplies values") {
  const GridSpec s = GridSpec::cube(16);
  const SdfGrid g = test::smooth_grid(s, 1, 8);
  const RigidTransform t{Vec3::Zero(), Vec3::Zero(), 2.0};
  const SdfGrid r = resample_under_transform(g, t);
  const Vec3 q = s.center_normalized(9, 7, 8) / 2.0;
  CHECK(r.at(0, 9, 7, 8) == doctest::Approx(2.0 * sample_trilinear(g, 0, q).value).epsilon(1e-12));
}

TEST_CASE("resampling parameter gradients match central differences") {
  const GridSpec s = GridSpec::cube(12);
  std::mt19937_64 rng(17);
  const double h = 1e-6;
  for (int c = 0; c < 100; ++c) {
    const SdfGrid g = test::smooth_grid(s, 1, 100 + c);
    RigidTransform t{test::random_vec(rng, -0.6, 0.6), test::random_vec(rng, -0.02, 0.02), uniform(rng, 0.8, 1.2)};
    // Upstream is zero wherever the sample point sits near a cell face.
    std::vector<double> up(s.voxel_count());
    for (int k = 0; k < 12; ++k)
      for (int j = 0; j < 12; ++j)
        for (int i = 0; i < 12; ++i) {
          const Vec3 q = t.apply_inverse(s.center(i, j, k)) / s.half_extent;
          bool near_face = false;
          for (int a = 0; a < 3; ++a) {
            const double u = (q[a] + 1.0) / s.pitch_normalized(a) - 0.5;
            near_face |= std::abs(u - std::round(u)) < 1e-3;
          }
          up[s.index(i, j, k)] = near_face ? 0.0 : uniform(rng, -1, 1);
        }
    const ResampleVjp vjp = resample_vjp(g, t, up);
    auto objective = [&](const RigidTransform& tt) {
      const SdfGrid r = resample_under_transform(g, tt);
      double acc = 0.0;
      for (std::size_t i = 0; i < up.size(); ++i) acc += up[i] * r.values()[i];
      return acc;
    };
    for (int p = 0; p < 7; ++p) {
      RigidTransform a = t, b = t;
      auto param = [&](RigidTransform& x) -> double& {
        return p < 3 ? x.rotation[p] : (p < 6 ? x.translation[p - 3] : x.scale);
      };
      param(a) += h;
      param(b) -= h;
      const double fd = (objective(a) - objective(b)) / (2 * h);
      CHECK(test::rel_err(vjp.params[p], fd, 1e-2) < 1e-4);
    }
    // Left-increment rotation gradient.
    for (int a = 0; a < 3; ++a) {
      Vec3 d = Vec3::Zero();
      d[a] = h;
      RigidTransform tp = t, tm = t;
      tp.rotation = so3_log(so3_exp(d) * t.rotation_matrix());
      tm.rotation = so3_log(so3_exp(-d) * t.rotation_matrix());
      const double fd = (objective(tp) - objective(tm)) / (2 * h);
      CHECK(test::rel_err(vjp.tangent_rotation[a], fd, 1e-2) < 1e-4);
    }
  }
}

TEST_CASE("resample jacobian and adjoint are consistent") {
  const GridSpec s = GridSpec::cube(10);
  const SdfGrid g = test::smooth_grid(s, 1, 5);
  const RigidTransform t{Vec3(0.1, 0.4, -0.2), Vec3(0.01, 0.0, 0.02), 1.1};
  const ResampleWithJacobian rj = resample_with_jacobian(g, t);
  const SdfGrid plain = resample_under_transform(g, t);
  std::mt19937_64 rng(6);
  std::vector<double> up(s.voxel_count());
  for (double& u : up) u = uniform(rng, -1, 1);
  TransformGradient acc{};
  for (std::size_t v = 0; v < up.size(); ++v) {
    REQUIRE(rj.grid.values()[v] == doctest::Approx(plain.values()[v]).epsilon(1e-12));
    for (int p = 0; p < 7; ++p) acc[p] += up[v] * rj.jacobian[v][p];
  }
  SdfGrid grid_grad(s, 1);
  const ResampleVjp vjp = resample_vjp(g, t, up, &grid_grad);
  for (int p = 0; p < 7; ++p) CHECK(acc[p] == doctest::Approx(vjp.params[p]).epsilon(1e-10));

  // Grid adjoint: <up, R g'> == <R^T up, g'> for a random g'.
  const SdfGrid other = test::smooth_grid(s, 1, 77);
  const SdfGrid r_other = resample_under_transform(other, t);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t v = 0; v < up.size(); ++v) {
    lhs += up[v] * r_other.values()[v];
    rhs += grid_grad.values()[v] * other.values()[v];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("marching cubes") {
  const GridSpec s = GridSpec::cube(64);
  CHECK(marching_cubes(SdfGrid(s, 1, 0.5)).empty());

  const TriMesh m = marching_cubes(analytic_sdf(ShapeDescriptor::sphere(0.05), s));
  REQUIRE_FALSE(m.empty());
  double worst = 0.0;
  for (const auto& v : m.vertices) worst = std::max(worst, std::abs(v.norm() - 0.05));
  CHECK(worst < 0.5 * s.pitch(0));

  // Closed surface: every undirected edge is shared by exactly two triangles.
  std::map<std::pair<int, int>, int> edges;
  for (const auto& f : m.faces)
    for (int e = 0; e < 3; ++e) {
      const int a = f[e], b = f[(e + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  bool closed = true;
  for (const auto& [_, n] : edges) closed &= n == 2;
  CHECK(closed);

  // Plane z = 0.013 crossing the whole grid: area equals the lattice cross-section.
  SdfGrid plane(s, 1);
  for (int k = 0; k < 64; ++k)
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) plane.at(0, i, j, k) = (s.center(i, j, k).z() - 0.013) / s.half_extent;
  const double side = 63 * s.pitch(0);
  CHECK(marching_cubes(plane).area() == doctest::Approx(side * side).epsilon(0.02));
}

TEST_CASE("marching cubes vertices lie near primitive surfaces") {
  const GridSpec s = GridSpec::cube(64);
  const RigidTransform t{Vec3(0.3, 0.2, 0.1), Vec3(0.005, 0, 0), 1.0};
  for (const auto& shape : {ShapeDescriptor::sphere(0.05), ShapeDescriptor::box(Vec3(0.04, 0.05, 0.03), t),
                            ShapeDescriptor::capsule(0.04, 0.02, t), ShapeDescriptor::cylinder(0.03, 0.05, t),
                            ShapeDescriptor::torus(0.05, 0.02, t)}) {
    const TriMesh m = marching_cubes(analytic_sdf(shape, s));
    REQUIRE_FALSE(m.empty());
    double worst = 0.0;
    for (const auto& v : m.vertices) worst = std::max(worst, std::abs(shape_distance(shape, v)));
    CHECK(worst < s.pitch(0));
  }
}

TEST_CASE("mesh_to_sdf of the extracted surface reproduces a smooth field") {
  const GridSpec s = GridSpec::cube(32);
  const auto shape = ShapeDescriptor::capsule(0.03, 0.035, RigidTransform{Vec3(0.4, 0, 0), Vec3::Zero(), 1.0});
  const SdfGrid g = analytic_sdf(shape, s);
  const SdfGrid back = mesh_to_sdf(marching_cubes(g), s);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (std::abs(g.values()[i]) < 0.9) worst = std::max(worst, std::abs(back.values()[i] - g.values()[i]));
  CHECK(worst < 1.5 * s.pitch_normalized(0));
}

TEST_CASE("eikonal residual") {
  const GridSpec s = GridSpec::cube(64);
  const SdfGrid sphere = analytic_sdf(ShapeDescriptor::sphere(0.05), s);
  const double pitch = s.pitch(0);
  const EikonalStats e = eikonal_residual(sphere, [&](int i, int j, int k) { return s.center(i, j, k).norm() > 2 * pitch; });
  CHECK(e.count > 0);
  CHECK(e.mean < 0.02);

  SdfGrid ramp(s, 1);
  for (int k = 0; k < 64; ++k)
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) ramp.at(0, i, j, k) = 0.5 * s.center_normalized(i, j, k).x();
  CHECK(eikonal_residual(ramp).max == doctest::Approx(0.5).epsilon(1e-9));
  for (double& v : ramp.values()) v *= 2.0;
  CHECK(eikonal_residual(ramp).max < 1e-9);

  SdfGrid doubled = sphere;
  for (double& v : doubled.values()) v *= 2.0;
  const EikonalStats d = eikonal_residual(doubled, [&](int i, int j, int k) {
    return s.center(i, j, k).norm() > 2 * pitch && s.center(i, j, k).norm() < 0.07;
  });
  CHECK(d.mean == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("eikonal loss gradient matches central differences") {
  const GridSpec s = GridSpec::cube(8);
  SdfGrid g = test::smooth_grid(s, 1, 31);
  SdfGrid grad(s, 1);
  eikonal_loss(g, &grad);
  std::mt19937_64 rng(4);
  for (int n = 0; n < 40; ++n) {
    const std::size_t v = rng() % g.size();
    const double h = 1e-6, orig = g.values()[v];
    g.values()[v] = orig + h;
    const double lp = eikonal_loss(g, nullptr);
    g.values()[v] = orig - h;
    const double lm = eikonal_loss(g, nullptr);
    g.values()[v] = orig;
    CHECK(test::rel_err(grad.values()[v], (lp - lm) / (2 * h), 1e-6) < 1e-4);
  }
}

TEST_CASE("OBJ round trip") {
  const TriMesh m = make_icosphere(1, 0.03, Vec3(0.01, 0, 0));
  const auto path = std::filesystem::temp_directory_path() / "hop_test_mesh.obj";
  write_obj(path, m);
  const TriMesh back = read_obj(path);
  REQUIRE(back.vertices.size() == m.vertices.size());
  CHECK(back.faces == m.faces);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK((back.vertices[i] - m.vertices[i]).norm() < 1e-9);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
