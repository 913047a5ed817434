#include <unordered_map>

#include "hop/sdf_geometry.hpp"

namespace hop {
namespace {

constexpr int kAxisBit[3] = {1, 2, 4};
constexpr int kPermutations[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

class EdgeVertexCache {
 public:
  EdgeVertexCache(const SdfGrid& grid, double iso, TriMesh& mesh) : grid_(grid), iso_(iso), mesh_(mesh) {}

  int vertex_on_edge(std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    const std::uint64_t key = static_cast<std::uint64_t>(a) * grid_.voxel_count() + b;
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const auto v = grid_.channel(0);
    const double fa = v[a], fb = v[b];
    const double t = (iso_ - fa) / (fb - fa);
    const Vec3 pa = position(a), pb = position(b);
    mesh_.vertices.push_back(pa + t * (pb - pa));
    const int id = static_cast<int>(mesh_.vertices.size()) - 1;
    cache_.emplace(key, id);
    return id;
  }

  Vec3 position(std::size_t idx) const {
    const auto& s = grid_.spec();
    const int i = static_cast<int>(idx % s.dims[0]);
    const int j = static_cast<int>((idx / s.dims[0]) % s.dims[1]);
    const int k = static_cast<int>(idx / (static_cast<std::size_t>(s.dims[0]) * s.dims[1]));
    return s.center(i, j, k);
  }

 private:
  const SdfGrid& grid_;
  double iso_;
  TriMesh& mesh_;
  std::unordered_map<std::uint64_t, int> cache_;
};

}  // namespace

TriMesh marching_cubes(const SdfGrid& grid, double iso) {
  TriMesh mesh;
  const GridSpec& s = grid.spec();
  const auto v = grid.channel(0);
  EdgeVertexCache cache(grid, iso, mesh);

  auto emit = [&](int a, int b, int c, std::size_t from_inside, std::size_t to_outside) {
    // Orient so the normal points from the inside (below iso) to the outside.
    const Vec3 n = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
    if (n.dot(cache.position(to_outside) - cache.position(from_inside)) < 0) std::swap(b, c);
    if (a != b && b != c && a != c) mesh.faces.push_back({a, b, c});
  };

  for (int k = 0; k + 1 < s.dims[2]; ++k)
    for (int j = 0; j + 1 < s.dims[1]; ++j)
      for (int i = 0; i + 1 < s.dims[0]; ++i) {
        std::size_t corner[8];
        bool any_in = false, any_out = false;
        for (int c = 0; c < 8; ++c) {
          corner[c] = s.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          (v[corner[c]] < iso ? any_in : any_out) = true;
        }
        if (!any_in || !any_out) continue;
        for (const auto& perm : kPermutations) {
          const int c1 = kAxisBit[perm[0]];
          const int c2 = c1 | kAxisBit[perm[1]];
          const std::size_t tet[4] = {corner[0], corner[c1], corner[c2], corner[7]};
          std::size_t in[4], out[4];
          int n_in = 0, n_out = 0;
          for (std::size_t t : tet) (v[t] < iso ? in[n_in++] : out[n_out++]) = t;
          if (n_in == 0 || n_out == 0) continue;
          if (n_in == 1) {
            const int a = cache.vertex_on_edge(in[0], out[0]);
            const int b = cache.vertex_on_edge(in[0], out[1]);
            const int c = cache.vertex_on_edge(in[0], out[2]);
            emit(a, b, c, in[0], out[0]);
          } else if (n_in == 3) {
            const int a = cache.vertex_on_edge(out[0], in[0]);
            const int b = cache.vertex_on_edge(out[0], in[1]);
            const int c = cache.vertex_on_edge(out[0], in[2]);
            emit(a, b, c, in[0], out[0]);
          } else {
            // Quad with cyclic edge order a-c, a-d, b-d, b-c.
            const int e0 = cache.vertex_on_edge(in[0], out[0]);
            const int e1 = cache.vertex_on_edge(in[0], out[1]);
            const int e2 = cache.vertex_on_edge(in[1], out[1]);
            const int e3 = cache.vertex_on_edge(in[1], out[0]);
            emit(e0, e1, e2, in[0], out[0]);
            emit(e0, e2, e3, in[1], out[0]);
          }
        }
      }
  return mesh;
}

}  // namespace hop
