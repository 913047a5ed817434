#include "hop/sdf_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hop/error.hpp"
#include "hop/parallel.hpp"

namespace hop {

// ---------------------------------------------------------------------------
// Shapes

ShapeDescriptor ShapeDescriptor::sphere(double r, const Vec3& center) {
  ShapeDescriptor s;
  s.kind = Kind::Sphere;
  s.radius = r;
  s.transform.translation = center;
  return s;
}

ShapeDescriptor ShapeDescriptor::box(const Vec3& half_sizes, const RigidTransform& t) {
  ShapeDescriptor s;
  s.kind = Kind::Box;
  s.half_sizes = half_sizes;
  s.transform = t;
  return s;
}

ShapeDescriptor ShapeDescriptor::capsule(double half_length, double r, const RigidTransform& t) {
  ShapeDescriptor s;
  s.kind = Kind::Capsule;
  s.half_length = half_length;
  s.radius = r;
  s.transform = t;
  return s;
}

ShapeDescriptor ShapeDescriptor::cylinder(double r, double half_height, const RigidTransform& t) {
  ShapeDescriptor s;
  s.kind = Kind::Cylinder;
  s.radius = r;
  s.half_length = half_height;
  s.transform = t;
  return s;
}

ShapeDescriptor ShapeDescriptor::torus(double major, double minor, const RigidTransform& t) {
  ShapeDescriptor s;
  s.kind = Kind::Torus;
  s.major_radius = major;
  s.radius = minor;
  s.transform = t;
  return s;
}

ShapeDescriptor ShapeDescriptor::make_union(std::vector<ShapeDescriptor> children) {
  ShapeDescriptor s;
  s.kind = Kind::Union;
  s.children = std::move(children);
  return s;
}

ShapeDescriptor ShapeDescriptor::smooth_union(std::vector<ShapeDescriptor> children, double sharpness) {
  ShapeDescriptor s;
  s.kind = Kind::SmoothUnion;
  s.children = std::move(children);
  s.sharpness = sharpness;
  return s;
}

namespace {

void validate_node(const ShapeDescriptor& s, int depth) {
  using K = ShapeDescriptor::Kind;
  if (depth > kMaxShapeDepth) fail(ErrorCode::InvalidShape, "shape nesting deeper than 8");
  if (!s.transform.is_finite()) fail(ErrorCode::InvalidShape, "shape transform must be finite with scale > 0");
  switch (s.kind) {
    case K::Sphere:
      if (!(s.radius > 0.0)) fail(ErrorCode::InvalidShape, "sphere radius must be positive");
      break;
    case K::Capsule:
      if (!(s.radius > 0.0) || !(s.half_length >= 0.0))
        fail(ErrorCode::InvalidShape, "capsule needs radius > 0 and half_length >= 0");
      break;
    case K::Box:
      if (!(s.half_sizes.minCoeff() > 0.0)) fail(ErrorCode::InvalidShape, "box half sizes must be positive");
      break;
    case K::Cylinder:
      if (!(s.radius > 0.0) || !(s.half_length > 0.0))
        fail(ErrorCode::InvalidShape, "cylinder radius and half height must be positive");
      break;
    case K::Torus:
      if (!(s.radius > 0.0) || !(s.major_radius > 0.0))
        fail(ErrorCode::InvalidShape, "torus radii must be positive");
      break;
    case K::Union:
    case K::SmoothUnion:
      if (s.children.empty()) fail(ErrorCode::InvalidShape, "union needs at least one child");
      if (s.kind == K::SmoothUnion && !(s.sharpness > 0.0))
        fail(ErrorCode::InvalidShape, "smooth-union sharpness must be positive");
      for (const auto& c : s.children) validate_node(c, depth + 1);
      break;
  }
}

double local_distance(const ShapeDescriptor& s, const Vec3& p) {
  using K = ShapeDescriptor::Kind;
  switch (s.kind) {
    case K::Sphere:
      return p.norm() - s.radius;
    case K::Capsule: {
      const double z = std::clamp(p.z(), -s.half_length, s.half_length);
      return (p - Vec3(0, 0, z)).norm() - s.radius;
    }
    case K::Box: {
      const Vec3 q = p.cwiseAbs() - s.half_sizes;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case K::Cylinder: {
      const double dx = std::hypot(p.x(), p.y()) - s.radius;
      const double dz = std::abs(p.z()) - s.half_length;
      return std::min(std::max(dx, dz), 0.0) + std::hypot(std::max(dx, 0.0), std::max(dz, 0.0));
    }
    case K::Torus: {
      const double q = std::hypot(p.x(), p.y()) - s.major_radius;
      return std::hypot(q, p.z()) - s.radius;
    }
    case K::Union: {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& c : s.children) d = std::min(d, shape_distance(c, p));
      return d;
    }
    case K::SmoothUnion: {
      std::vector<double> ds;
      ds.reserve(s.children.size());
      for (const auto& c : s.children) ds.push_back(shape_distance(c, p));
      const double m = *std::min_element(ds.begin(), ds.end());
      double acc = 0.0;
      for (double d : ds) acc += std::exp(-s.sharpness * (d - m));
      return m - std::log(acc) / s.sharpness;
    }
  }
  return 0.0;
}

}  // namespace

void validate_shape(const ShapeDescriptor& shape) { validate_node(shape, 1); }

double shape_distance(const ShapeDescriptor& shape, const Vec3& p) {
  return shape.transform.scale * local_distance(shape, shape.transform.apply_inverse(p));
}

std::array<Vec3, 2> shape_bounds(const ShapeDescriptor& s) {
  using K = ShapeDescriptor::Kind;
  Vec3 lo, hi;
  switch (s.kind) {
    case K::Sphere: lo = Vec3::Constant(-s.radius); break;
    case K::Capsule: lo = Vec3(-s.radius, -s.radius, -s.radius - s.half_length); break;
    case K::Box: lo = -s.half_sizes; break;
    case K::Cylinder: lo = Vec3(-s.radius, -s.radius, -s.half_length); break;
    case K::Torus: lo = Vec3(-s.major_radius - s.radius, -s.major_radius - s.radius, -s.radius); break;
    case K::Union:
    case K::SmoothUnion: {
      lo = Vec3::Constant(std::numeric_limits<double>::infinity());
      hi = -lo;
      for (const auto& c : s.children) {
        const auto b = shape_bounds(c);
        lo = lo.cwiseMin(b[0]);
        hi = hi.cwiseMax(b[1]);
      }
      break;
    }
  }
  if (s.kind != K::Union && s.kind != K::SmoothUnion) hi = -lo;
  // Transform the 8 corners of the local box.
  Vec3 out_lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 out_hi = -out_lo;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(), (c & 4) ? hi.z() : lo.z());
    const Vec3 p = s.transform.apply(corner);
    out_lo = out_lo.cwiseMin(p);
    out_hi = out_hi.cwiseMax(p);
  }
  return {out_lo, out_hi};
}

SdfGrid sdf_from_function(const GridSpec& spec, const std::function<double(const Vec3&)>& distance_m) {
  SdfGrid grid(spec, 1);
  auto values = grid.values();
  const int nx = spec.dims[0], ny = spec.dims[1];
  parallel_for(static_cast<std::size_t>(spec.dims[2]), [&](std::size_t k0, std::size_t k1) {
    for (auto k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
          values[spec.index(i, j, k)] = truncate_sdf(distance_m(spec.center(i, j, k)) / spec.half_extent);
  });
  return grid;
}

SdfGrid analytic_sdf(const ShapeDescriptor& shape, const GridSpec& spec) {
  validate_shape(shape);
  return sdf_from_function(spec, [&](const Vec3& p) { return shape_distance(shape, p); });
}

// ---------------------------------------------------------------------------
// Meshes

double TriMesh::area() const {
  double a = 0.0;
  for (const auto& f : faces)
    a += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
  return a;
}

bool TriMesh::valid() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& f : faces) {
    for (int idx : f)
      if (idx < 0 || idx >= n) return false;
    const double a = 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
    if (a < 1e-12) return false;
  }
  return true;
}

void TriMesh::append(const TriMesh& other) {
  const int base = static_cast<int>(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (auto f : other.faces) faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = mid.find(key); it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriMesh mesh;
  for (const auto& p : v) mesh.vertices.push_back(center + radius * p);
  mesh.faces = std::move(f);
  return mesh;
}

TriMesh make_box_mesh(const Vec3& h, const Vec3& center) {
  TriMesh mesh;
  for (int c = 0; c < 8; ++c)
    mesh.vertices.push_back(center + Vec3((c & 1) ? h.x() : -h.x(), (c & 2) ? h.y() : -h.y(), (c & 4) ? h.z() : -h.z()));
  // Outward-facing (counter-clockwise seen from outside).
  mesh.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return mesh;
}

TriMesh make_capsule_mesh(const Vec3& a, const Vec3& b, double radius, int segments) {
  segments = std::max(segments, 4);
  const int half_rings = segments / 2;
  Vec3 axis = b - a;
  const double length = axis.norm();
  axis = length > 1e-12 ? Vec3(axis / length) : Vec3::UnitZ();
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = axis.cross(helper).normalized();
  const Vec3 w = axis.cross(u);

  TriMesh mesh;
  mesh.vertices.push_back(a - radius * axis);  // bottom pole
  // Latitude rings from the bottom hemisphere to the top one; the equator is
  // emitted twice (once per end) to form the cylinder band.
  std::vector<std::pair<double, const Vec3*>> rings;
  for (int r = 1; r <= half_rings; ++r) rings.emplace_back(-M_PI / 2 + M_PI / 2 * r / half_rings, &a);
  for (int r = 0; r < half_rings; ++r) rings.emplace_back(M_PI / 2 * r / half_rings, &b);
  for (const auto& [lat, base] : rings)
    for (int s = 0; s < segments; ++s) {
      const double lon = 2 * M_PI * s / segments;
      mesh.vertices.push_back(*base + radius * (std::cos(lat) * (std::cos(lon) * u + std::sin(lon) * w) +
                                                std::sin(lat) * axis));
    }
  mesh.vertices.push_back(b + radius * axis);  // top pole
  const int top = static_cast<int>(mesh.vertices.size()) - 1;
  const int nrings = static_cast<int>(rings.size());
  auto ring_vertex = [&](int r, int s) { return 1 + r * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) mesh.faces.push_back({0, ring_vertex(0, s + 1), ring_vertex(0, s)});
  for (int r = 0; r + 1 < nrings; ++r)
    for (int s = 0; s < segments; ++s) {
      mesh.faces.push_back({ring_vertex(r, s), ring_vertex(r, s + 1), ring_vertex(r + 1, s + 1)});
      mesh.faces.push_back({ring_vertex(r, s), ring_vertex(r + 1, s + 1), ring_vertex(r + 1, s)});
    }
  for (int s = 0; s < segments; ++s) mesh.faces.push_back({ring_vertex(nrings - 1, s), ring_vertex(nrings - 1, s + 1), top});
  return mesh;
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) fail(ErrorCode::IoFailure, "write failed: " + path.string());
}

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open mesh: " + path.string());
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      if (!ls) fail(ErrorCode::IoFailure, "malformed vertex line in " + path.string());
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string token;
      while (ls >> token) {
        const int i = std::stoi(token.substr(0, token.find('/')));
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(mesh.vertices.size()) + i);
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

struct AxisCoord {
  int i0;
  double frac;
  bool inside;  // false when clamped to the border
};

inline AxisCoord axis_coord(double normalized, int n) {
  double u = (normalized + 1.0) * 0.5 * n - 0.5;
  bool inside = true;
  if (!(u >= 0.0)) {  // also catches NaN
    u = 0.0;
    inside = false;
  } else if (u > n - 1) {
    u = n - 1;
    inside = false;
  }
  int i0 = static_cast<int>(std::floor(u));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, u - i0, inside};
}

}  // namespace

std::array<std::pair<std::size_t, double>, 8> trilinear_stencil(const GridSpec& spec, const Vec3& p) {
  const AxisCoord ax = axis_coord(p.x(), spec.dims[0]);
  const AxisCoord ay = axis_coord(p.y(), spec.dims[1]);
  const AxisCoord az = axis_coord(p.z(), spec.dims[2]);
  std::array<std::pair<std::size_t, double>, 8> out;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? ax.frac : 1 - ax.frac) * (dy ? ay.frac : 1 - ay.frac) * (dz ? az.frac : 1 - az.frac);
    out[c] = {spec.index(ax.i0 + dx, ay.i0 + dy, az.i0 + dz), w};
  }
  return out;
}

void sample_trilinear_all(const VoxelGrid& grid, const Vec3& p, std::span<double> values, std::span<Vec3> gradients) {
  const GridSpec& spec = grid.spec();
  const AxisCoord ax = axis_coord(p.x(), spec.dims[0]);
  const AxisCoord ay = axis_coord(p.y(), spec.dims[1]);
  const AxisCoord az = axis_coord(p.z(), spec.dims[2]);
  const double fx = ax.frac, fy = ay.frac, fz = az.frac;
  const std::size_t base = spec.index(ax.i0, ay.i0, az.i0);
  const std::size_t sx = 1, sy = spec.dims[0], sz = static_cast<std::size_t>(spec.dims[0]) * spec.dims[1];
  const Vec3 scale(ax.inside ? 0.5 * spec.dims[0] : 0.0, ay.inside ? 0.5 * spec.dims[1] : 0.0,
                   az.inside ? 0.5 * spec.dims[2] : 0.0);
  for (int c = 0; c < grid.channels(); ++c) {
    const double* d = grid.channel(c).data() + base;
    const double c000 = d[0], c100 = d[sx], c010 = d[sy], c110 = d[sx + sy];
    const double c001 = d[sz], c101 = d[sx + sz], c011 = d[sy + sz], c111 = d[sx + sy + sz];
    const double c00 = c000 + fx * (c100 - c000), c10 = c010 + fx * (c110 - c010);
    const double c01 = c001 + fx * (c101 - c001), c11 = c011 + fx * (c111 - c011);
    const double c0 = c00 + fy * (c10 - c00), c1 = c01 + fy * (c11 - c01);
    if (!values.empty()) values[c] = c0 + fz * (c1 - c0);
    if (!gradients.empty()) {
      const double dx0 = (1 - fy) * (c100 - c000) + fy * (c110 - c010);
      const double dx1 = (1 - fy) * (c101 - c001) + fy * (c111 - c011);
      const double gx = (1 - fz) * dx0 + fz * dx1;
      const double gy = (1 - fz) * (c10 - c00) + fz * (c11 - c01);
      const double gz = c1 - c0;
      gradients[c] = Vec3(gx * scale.x(), gy * scale.y(), gz * scale.z());
    }
  }
}

TrilinearSample sample_trilinear(const VoxelGrid& grid, int channel, const Vec3& p) {
  const GridSpec& spec = grid.spec();
  const AxisCoord ax = axis_coord(p.x(), spec.dims[0]);
  const AxisCoord ay = axis_coord(p.y(), spec.dims[1]);
  const AxisCoord az = axis_coord(p.z(), spec.dims[2]);
  const double fx = ax.frac, fy = ay.frac, fz = az.frac;
  const std::size_t sy = spec.dims[0], sz = static_cast<std::size_t>(spec.dims[0]) * spec.dims[1];
  const double* d = grid.channel(channel).data() + spec.index(ax.i0, ay.i0, az.i0);
  const double c000 = d[0], c100 = d[1], c010 = d[sy], c110 = d[1 + sy];
  const double c001 = d[sz], c101 = d[1 + sz], c011 = d[sy + sz], c111 = d[1 + sy + sz];
  const double c00 = c000 + fx * (c100 - c000), c10 = c010 + fx * (c110 - c010);
  const double c01 = c001 + fx * (c101 - c001), c11 = c011 + fx * (c111 - c011);
  const double c0 = c00 + fy * (c10 - c00), c1 = c01 + fy * (c11 - c01);
  TrilinearSample s;
  s.value = c0 + fz * (c1 - c0);
  const double dx0 = (1 - fy) * (c100 - c000) + fy * (c110 - c010);
  const double dx1 = (1 - fy) * (c101 - c001) + fy * (c111 - c011);
  s.gradient = Vec3(ax.inside ? ((1 - fz) * dx0 + fz * dx1) * 0.5 * spec.dims[0] : 0.0,
                    ay.inside ? ((1 - fz) * (c10 - c00) + fz * (c11 - c01)) * 0.5 * spec.dims[1] : 0.0,
                    az.inside ? (c1 - c0) * 0.5 * spec.dims[2] : 0.0);
  return s;
}

// ---------------------------------------------------------------------------
// Resampling under a rigid transform

namespace {

struct ResampleContext {
  Mat3 rt;         // R^T
  Mat3 r;
  Mat3 jl_t;       // J_l(w)^T
  double inv_scale_h;  // 1 / (scale * h_src)
  // Source lattice coordinate of output voxel (i, j, k) is origin + i*step[0] + j*step[1] + k*step[2].
  Vec3 origin;
  std::array<Vec3, 3> step;
};

ResampleContext make_context(const SdfGrid& grid, const RigidTransform& t) {
  ResampleContext c;
  const GridSpec& spec = grid.spec();
  c.r = t.rotation_matrix();
  c.rt = c.r.transpose();
  c.jl_t = so3_left_jacobian(t.rotation).transpose();
  c.inv_scale_h = 1.0 / (t.scale * spec.half_extent);
  const Vec3 half_n(0.5 * spec.dims[0], 0.5 * spec.dims[1], 0.5 * spec.dims[2]);
  auto lattice = [&](const Vec3& x) -> Vec3 {
    const Vec3 q = c.rt * (x - t.translation) * c.inv_scale_h;
    return ((q.array() + 1.0) * half_n.array() - 0.5).matrix();
  };
  c.origin = lattice(spec.center(0, 0, 0));
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = spec.pitch(a);
    c.step[a] = c.rt * e * c.inv_scale_h;
    c.step[a] = c.step[a].cwiseProduct(half_n);
  }
  return c;
}

struct LatticeSample {
  double value;
  Vec3 gradient;  // d value / d lattice coordinate, zero along clamped axes
  std::array<int, 3> i0;
  Vec3 frac;
};

// Trilinear sample at a continuous lattice coordinate, with the same border
// policy as sample_trilinear.
inline LatticeSample sample_lattice(const double* data, const GridSpec& spec, const Vec3& u) {
  LatticeSample s;
  bool inside[3];
  for (int a = 0; a < 3; ++a) {
    const int n = spec.dims[a];
    double v = u[a];
    inside[a] = true;
    if (!(v >= 0.0)) {
      v = 0.0;
      inside[a] = false;
    } else if (v > n - 1) {
      v = n - 1;
      inside[a] = false;
    }
    int i = static_cast<int>(v);
    if (i > n - 2) i = n - 2;
    s.i0[a] = i;
    s.frac[a] = v - i;
  }
  const std::size_t sy = spec.dims[0], sz = static_cast<std::size_t>(spec.dims[0]) * spec.dims[1];
  const double* d = data + spec.index(s.i0[0], s.i0[1], s.i0[2]);
  const double fx = s.frac[0], fy = s.frac[1], fz = s.frac[2];
  const double c000 = d[0], c100 = d[1], c010 = d[sy], c110 = d[1 + sy];
  const double c001 = d[sz], c101 = d[1 + sz], c011 = d[sy + sz], c111 = d[1 + sy + sz];
  const double c00 = c000 + fx * (c100 - c000), c10 = c010 + fx * (c110 - c010);
  const double c01 = c001 + fx * (c101 - c001), c11 = c011 + fx * (c111 - c011);
  const double c0 = c00 + fy * (c10 - c00), c1 = c01 + fy * (c11 - c01);
  s.value = c0 + fz * (c1 - c0);
  const double dx0 = (1 - fy) * (c100 - c000) + fy * (c110 - c010);
  const double dx1 = (1 - fy) * (c101 - c001) + fy * (c111 - c011);
  s.gradient = Vec3(inside[0] ? (1 - fz) * dx0 + fz * dx1 : 0.0,
                    inside[1] ? (1 - fz) * (c10 - c00) + fz * (c11 - c01) : 0.0, inside[2] ? c1 - c0 : 0.0);
  return s;
}

struct VoxelTerms {
  double value;
  Vec3 a;  // R * d sample / d q, meters
  Vec3 y;  // x - translation
  double d_scale;
};

inline VoxelTerms voxel_terms(const LatticeSample& s, const Vec3& u, const GridSpec& spec, const ResampleContext& ctx,
                              const RigidTransform& t, int i, int j, int k) {
  const double h = spec.half_extent;
  const Vec3 half_n(0.5 * spec.dims[0], 0.5 * spec.dims[1], 0.5 * spec.dims[2]);
  const Vec3 g_metric = s.gradient.cwiseProduct(half_n) / h;
  const Vec3 q = ((u.array() + 0.5) / half_n.array() - 1.0).matrix() * h;  // source point, meters
  return {s.value, ctx.r * g_metric, spec.center(i, j, k) - t.translation, s.value - g_metric.dot(q)};
}

}  // namespace

SdfGrid resample_under_transform(const SdfGrid& grid, const RigidTransform& t) {
  const GridSpec& spec = grid.spec();
  SdfGrid out(spec, 1);
  const ResampleContext ctx = make_context(grid, t);
  auto values = out.values();
  const double* src = grid.channel(0).data();
  parallel_for(static_cast<std::size_t>(spec.dims[2]), [&](std::size_t k0, std::size_t k1) {
    for (auto k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
      for (int j = 0; j < spec.dims[1]; ++j) {
        const Vec3 row = ctx.origin + j * ctx.step[1] + k * ctx.step[2];
        double* dst = values.data() + spec.index(0, j, k);
        for (int i = 0; i < spec.dims[0]; ++i) dst[i] = t.scale * sample_lattice(src, spec, row + i * ctx.step[0]).value;
      }
  });
  return out;
}

ResampleWithJacobian resample_with_jacobian(const SdfGrid& grid, const RigidTransform& t) {
  const GridSpec& spec = grid.spec();
  ResampleWithJacobian result{SdfGrid(spec, 1), std::vector<TransformGradient>(spec.voxel_count())};
  const ResampleContext ctx = make_context(grid, t);
  auto values = result.grid.values();
  const double* src = grid.channel(0).data();
  parallel_for(static_cast<std::size_t>(spec.dims[2]), [&](std::size_t k0, std::size_t k1) {
    for (auto k = static_cast<int>(k0); k < static_cast<int>(k1); ++k)
      for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
          const std::size_t idx = spec.index(i, j, k);
          const Vec3 u = ctx.origin + i * ctx.step[0] + j * ctx.step[1] + k * ctx.step[2];
          const VoxelTerms v = voxel_terms(sample_lattice(src, spec, u), u, spec, ctx, t, i, j, k);
          values[idx] = t.scale * v.value;
          const Vec3 d_rot = ctx.jl_t * v.a.cross(v.y);
          result.jacobian[idx] = {d_rot.x(), d_rot.y(), d_rot.z(), -v.a.x(), -v.a.y(), -v.a.z(), v.d_scale};
        }
  });
  return result;
}

ResampleVjp resample_vjp(const SdfGrid& grid, const RigidTransform& t, std::span<const double> upstream,
                         VoxelGrid* grid_gradient) {
  const GridSpec& spec = grid.spec();
  require(upstream.size() == spec.voxel_count(), ErrorCode::ShapeMismatch, "resample_vjp: upstream size mismatch");
  if (grid_gradient)
    require(grid_gradient->spec() == spec && grid_gradient->channels() == 1, ErrorCode::ShapeMismatch,
            "resample_vjp: grid gradient shape mismatch");
  const ResampleContext ctx = make_context(grid, t);
  const double* src = grid.channel(0).data();
  const std::size_t sy = spec.dims[0], sz = static_cast<std::size_t>(spec.dims[0]) * spec.dims[1];
  Vec3 tangent = Vec3::Zero();
  Vec3 d_trans = Vec3::Zero();
  double d_scale = 0.0;
  for (int k = 0; k < spec.dims[2]; ++k)
    for (int j = 0; j < spec.dims[1]; ++j) {
      const Vec3 row = ctx.origin + j * ctx.step[1] + k * ctx.step[2];
      for (int i = 0; i < spec.dims[0]; ++i) {
        const std::size_t idx = spec.index(i, j, k);
        const double up = upstream[idx];
        if (up == 0.0) continue;
        const Vec3 u = row + i * ctx.step[0];
        const LatticeSample s = sample_lattice(src, spec, u);
        const VoxelTerms v = voxel_terms(s, u, spec, ctx, t, i, j, k);
        tangent += up * v.a.cross(v.y);
        d_trans -= up * v.a;
        d_scale += up * v.d_scale;
        if (grid_gradient) {
          double* g = grid_gradient->values().data() + spec.index(s.i0[0], s.i0[1], s.i0[2]);
          const double fx = s.frac[0], fy = s.frac[1], fz = s.frac[2];
          const double w = up * t.scale;
          g[0] += w * (1 - fx) * (1 - fy) * (1 - fz);
          g[1] += w * fx * (1 - fy) * (1 - fz);
          g[sy] += w * (1 - fx) * fy * (1 - fz);
          g[1 + sy] += w * fx * fy * (1 - fz);
          g[sz] += w * (1 - fx) * (1 - fy) * fz;
          g[1 + sz] += w * fx * (1 - fy) * fz;
          g[sy + sz] += w * (1 - fx) * fy * fz;
          g[1 + sy + sz] += w * fx * fy * fz;
        }
      }
    }
  ResampleVjp out;
  out.tangent_rotation = tangent;
  const Vec3 d_rot = ctx.jl_t * tangent;
  out.params = {d_rot.x(), d_rot.y(), d_rot.z(), d_trans.x(), d_trans.y(), d_trans.z(), d_scale};
  return out;
}

// ---------------------------------------------------------------------------
// Eikonal diagnostics

namespace {

template <typename Visit>
void for_each_eikonal_voxel(const SdfGrid& grid, Visit&& visit) {
  const GridSpec& spec = grid.spec();
  const auto v = grid.channel(0);
  const double band = kSdfTruncation - spec.pitch_normalized(0);
  const std::size_t sx = 1, sy = spec.dims[0], sz = static_cast<std::size_t>(spec.dims[0]) * spec.dims[1];
  for (int k = 1; k + 1 < spec.dims[2]; ++k)
    for (int j = 1; j + 1 < spec.dims[1]; ++j)
      for (int i = 1; i + 1 < spec.dims[0]; ++i) {
        const std::size_t idx = spec.index(i, j, k);
        if (!(std::abs(v[idx]) < band)) continue;
        const Vec3 g((v[idx + sx] - v[idx - sx]) / (2 * spec.pitch_normalized(0)),
                     (v[idx + sy] - v[idx - sy]) / (2 * spec.pitch_normalized(1)),
                     (v[idx + sz] - v[idx - sz]) / (2 * spec.pitch_normalized(2)));
        visit(i, j, k, idx, g);
      }
}

}  // namespace

EikonalStats eikonal_residual(const SdfGrid& grid, const std::function<bool(int, int, int)>& include) {
  EikonalStats stats;
  double sum = 0.0;
  for_each_eikonal_voxel(grid, [&](int i, int j, int k, std::size_t, const Vec3& g) {
    if (include && !include(i, j, k)) return;
    const double r = std::abs(g.norm() - 1.0);
    sum += r;
    stats.max = std::max(stats.max, r);
    ++stats.count;
  });
  stats.mean = stats.count ? sum / stats.count : 0.0;
  return stats;
}

double eikonal_loss(const SdfGrid& grid, VoxelGrid* gradient) {
  const GridSpec& spec = grid.spec();
  std::size_t count = 0;
  for_each_eikonal_voxel(grid, [&](int, int, int, std::size_t, const Vec3&) { ++count; });
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  const std::size_t strides[3] = {1, static_cast<std::size_t>(spec.dims[0]),
                                  static_cast<std::size_t>(spec.dims[0]) * spec.dims[1]};
  double loss = 0.0;
  for_each_eikonal_voxel(grid, [&](int, int, int, std::size_t idx, const Vec3& g) {
    const double n = g.norm();
    const double e = n - 1.0;
    loss += e * e * inv;
    if (gradient && n > 1e-12) {
      auto gv = gradient->values();
      for (int a = 0; a < 3; ++a) {
        const double d = 2.0 * e * inv * g[a] / n / (2 * spec.pitch_normalized(a));
        gv[idx + strides[a]] += d;
        gv[idx - strides[a]] -= d;
      }
    }
  });
  return loss;
}

}  // namespace hop
