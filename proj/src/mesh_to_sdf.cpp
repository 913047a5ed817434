#include <algorithm>
#include <cmath>
#include <numeric>

#include "hop/error.hpp"
#include "hop/parallel.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Closest point by Voronoi region (Ericson, Real-Time Collision Detection 5.1.5).
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + d1 / (d1 - d3) * ab)).norm();
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + d2 / (d2 - d6) * ac)).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return (p - (b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b))).norm();
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

namespace {

double solid_angle(const Vec3& p, const Vec3& A, const Vec3& B, const Vec3& C) {
  const Vec3 a = A - p, b = B - p, c = C - p;
  const double la = a.norm(), lb = b.norm(), lc = c.norm();
  const double num = a.dot(b.cross(c));
  const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
  return 2.0 * std::atan2(num, den);
}

struct Node {
  Vec3 lo, hi;
  Vec3 centroid;        // area-weighted
  Vec3 dipole;          // sum of area-weighted normals
  double radius = 0.0;  // bounding radius about the centroid
  int left = -1, right = -1;
  int begin = 0, end = 0;  // triangle range for leaves
};

double box_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  return (lo - p).cwiseMax(p - hi).cwiseMax(0.0).norm();
}

}  // namespace

struct MeshSdfQuery::Impl {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  std::vector<Node> nodes;

  Vec3 vertex(int t, int c) const { return verts[tris[t][c]]; }

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    Vec3 weighted = Vec3::Zero();
    double area = 0.0;
    node.dipole = Vec3::Zero();
    for (int t = begin; t < end; ++t) {
      const Vec3 a = vertex(t, 0), b = vertex(t, 1), c = vertex(t, 2);
      for (const Vec3* v : {&a, &b, &c}) {
        node.lo = node.lo.cwiseMin(*v);
        node.hi = node.hi.cwiseMax(*v);
      }
      const Vec3 n2 = (b - a).cross(c - a);
      const double ar = 0.5 * n2.norm();
      node.dipole += 0.5 * n2;
      weighted += ar * (a + b + c) / 3.0;
      area += ar;
    }
    node.centroid = area > 0 ? Vec3(weighted / area) : Vec3(0.5 * (node.lo + node.hi));
    for (int t = begin; t < end; ++t)
      for (int c = 0; c < 3; ++c) node.radius = std::max(node.radius, (vertex(t, c) - node.centroid).norm());
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(node);
    if (end - begin > 4) {
      const Vec3 extent = node.hi - node.lo;
      int axis = 0;
      extent.maxCoeff(&axis);
      const int mid = (begin + end) / 2;
      std::nth_element(tris.begin() + begin, tris.begin() + mid, tris.begin() + end,
                       [&](const auto& x, const auto& y) {
                         return verts[x[0]][axis] + verts[x[1]][axis] + verts[x[2]][axis] <
                                verts[y[0]][axis] + verts[y[1]][axis] + verts[y[2]][axis];
                       });
      const int l = build(begin, mid);
      const int r = build(mid, end);
      nodes[id].left = l;
      nodes[id].right = r;
    }
    return id;
  }

  void nearest(int id, const Vec3& p, double& best) const {
    const Node& n = nodes[id];
    if (box_distance(p, n.lo, n.hi) >= best) return;
    if (n.left < 0) {
      for (int t = n.begin; t < n.end; ++t)
        best = std::min(best, point_triangle_distance(p, vertex(t, 0), vertex(t, 1), vertex(t, 2)));
      return;
    }
    const double dl = box_distance(p, nodes[n.left].lo, nodes[n.left].hi);
    const double dr = box_distance(p, nodes[n.right].lo, nodes[n.right].hi);
    if (dl < dr) {
      nearest(n.left, p, best);
      nearest(n.right, p, best);
    } else {
      nearest(n.right, p, best);
      nearest(n.left, p, best);
    }
  }

  double winding(int id, const Vec3& p) const {
    const Node& n = nodes[id];
    const Vec3 d = n.centroid - p;
    const double dist = d.norm();
    if (dist > 2.0 * n.radius && n.radius > 0.0) {
      // Far field: first-order dipole expansion of the summed solid angles.
      return n.dipole.dot(d) / (dist * dist * dist);
    }
    if (n.left < 0) {
      double s = 0.0;
      for (int t = n.begin; t < n.end; ++t) s += solid_angle(p, vertex(t, 0), vertex(t, 1), vertex(t, 2));
      return s;
    }
    return winding(n.left, p) + winding(n.right, p);
  }
};

MeshSdfQuery::MeshSdfQuery(const TriMesh& mesh) : impl_(std::make_unique<Impl>()) {
  if (mesh.empty()) fail(ErrorCode::EmptyMesh, "mesh has no triangles");
  impl_->verts = mesh.vertices;
  impl_->tris = mesh.faces;
  for (const auto& f : mesh.faces)
    for (int i : f)
      if (i < 0 || i >= static_cast<int>(mesh.vertices.size()))
        fail(ErrorCode::InvalidArgument, "mesh face index out of range");
  impl_->nodes.reserve(2 * mesh.faces.size() / 4 + 2);
  impl_->build(0, static_cast<int>(mesh.faces.size()));
}

MeshSdfQuery::~MeshSdfQuery() = default;
MeshSdfQuery::MeshSdfQuery(MeshSdfQuery&&) noexcept = default;
MeshSdfQuery& MeshSdfQuery::operator=(MeshSdfQuery&&) noexcept = default;

double MeshSdfQuery::unsigned_distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  impl_->nearest(0, p, best);
  return best;
}

double MeshSdfQuery::winding_number(const Vec3& p) const { return impl_->winding(0, p) / (4.0 * M_PI); }

double MeshSdfQuery::signed_distance(const Vec3& p) const {
  const double d = unsigned_distance(p);
  return winding_number(p) > 0.5 ? -d : d;
}

SdfGrid mesh_to_sdf(const TriMesh& mesh, const GridSpec& spec) {
  const MeshSdfQuery query(mesh);
  return sdf_from_function(spec, [&](const Vec3& p) { return query.signed_distance(p); });
}

}  // namespace hop
