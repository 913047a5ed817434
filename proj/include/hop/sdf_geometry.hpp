#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "hop/grid.hpp"
#include "hop/math.hpp"

namespace hop {

/// Single-channel truncated SDF in normalized units (1 = half-extent), values in [-1, 1].
using SdfGrid = VoxelGrid;

inline constexpr double kSdfTruncation = 1.0;

inline double truncate_sdf(double normalized) {
  return normalized < -kSdfTruncation ? -kSdfTruncation : (normalized > kSdfTruncation ? kSdfTruncation : normalized);
}

// ---------------------------------------------------------------------------
// Analytic primitives

/// Primitive or CSG node. Sizes are meters; `transform` maps the node's local
/// frame into its parent frame. Capsules and cylinders run along local z.
struct ShapeDescriptor {
  enum class Kind { Sphere, Capsule, Box, Cylinder, Torus, Union, SmoothUnion };

  Kind kind = Kind::Sphere;
  double radius = 0.0;       // sphere, capsule, cylinder; torus tube radius
  double half_length = 0.0;  // capsule segment half-length, cylinder half-height
  double major_radius = 0.0; // torus
  Vec3 half_sizes = Vec3::Zero();  // box
  double sharpness = 0.0;    // smooth-union log-sum-exp sharpness, 1/m
  RigidTransform transform;
  std::vector<ShapeDescriptor> children;

  static ShapeDescriptor sphere(double r, const Vec3& center = Vec3::Zero());
  static ShapeDescriptor box(const Vec3& half_sizes, const RigidTransform& t = {});
  static ShapeDescriptor capsule(double half_length, double r, const RigidTransform& t = {});
  static ShapeDescriptor cylinder(double r, double half_height, const RigidTransform& t = {});
  static ShapeDescriptor torus(double major, double minor, const RigidTransform& t = {});
  static ShapeDescriptor make_union(std::vector<ShapeDescriptor> children);
  static ShapeDescriptor smooth_union(std::vector<ShapeDescriptor> children, double sharpness);
};

inline constexpr int kMaxShapeDepth = 8;

/// Throws InvalidShape on nonpositive sizes, empty CSG nodes or nesting deeper than 8.
void validate_shape(const ShapeDescriptor& shape);

/// Untruncated signed distance in meters.
double shape_distance(const ShapeDescriptor& shape, const Vec3& p);

/// Conservative axis-aligned bounds of the shape (meters): {min, max}.
std::array<Vec3, 2> shape_bounds(const ShapeDescriptor& shape);

SdfGrid analytic_sdf(const ShapeDescriptor& shape, const GridSpec& spec);

/// Fills a grid from a metric signed-distance function, normalizing and truncating.
SdfGrid sdf_from_function(const GridSpec& spec, const std::function<double(const Vec3&)>& distance_m);

// ---------------------------------------------------------------------------
// Triangle meshes

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }
  double area() const;
  /// Indices in range and no triangle below 1e-12 m^2.
  bool valid() const;
  void append(const TriMesh& other);
};

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center = Vec3::Zero());
TriMesh make_box_mesh(const Vec3& half_sizes, const Vec3& center = Vec3::Zero());
TriMesh make_capsule_mesh(const Vec3& a, const Vec3& b, double radius, int segments = 12);

void write_obj(const std::filesystem::path& path, const TriMesh& mesh);
TriMesh read_obj(const std::filesystem::path& path);

/// Exact unsigned distance (BVH) plus fast generalized winding number.
class MeshSdfQuery {
 public:
  explicit MeshSdfQuery(const TriMesh& mesh);
  ~MeshSdfQuery();
  MeshSdfQuery(MeshSdfQuery&&) noexcept;
  MeshSdfQuery& operator=(MeshSdfQuery&&) noexcept;

  double unsigned_distance(const Vec3& p) const;
  double winding_number(const Vec3& p) const;
  /// Negative where the winding number exceeds 0.5.
  double signed_distance(const Vec3& p) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Throws EmptyMesh.
SdfGrid mesh_to_sdf(const TriMesh& mesh, const GridSpec& spec);

/// Point-to-triangle distance, used by the BVH and by brute-force checks.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// ---------------------------------------------------------------------------
// Differentiable sampling

struct TrilinearSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();  ///< d value / d normalized coordinate
};

/// Trilinear interpolation at a normalized point. Outside the lattice of voxel
/// centers the coordinate is clamped to the border and the gradient along that
/// axis is 0.
TrilinearSample sample_trilinear(const VoxelGrid& grid, int channel, const Vec3& normalized_point);

/// All channels at once; `values` and `gradients` must have `grid.channels()` entries.
void sample_trilinear_all(const VoxelGrid& grid, const Vec3& normalized_point, std::span<double> values,
                          std::span<Vec3> gradients);

/// Trilinear corner weights for scatter (adjoint of sampling). Returns 8 (index, weight) pairs.
std::array<std::pair<std::size_t, double>, 8> trilinear_stencil(const GridSpec& spec, const Vec3& normalized_point);

/// Transform parameters in the order (rotation axis-angle x3, translation x3 [m], scale).
using TransformGradient = std::array<double, 7>;

/// Output voxel v = scale * sample(grid, T^-1(x_v)). The output lives on `grid`'s lattice.
SdfGrid resample_under_transform(const SdfGrid& grid, const RigidTransform& t);

struct ResampleWithJacobian {
  SdfGrid grid;
  std::vector<TransformGradient> jacobian;  ///< per output voxel, d value / d parameters
};
ResampleWithJacobian resample_with_jacobian(const SdfGrid& grid, const RigidTransform& t);

/// Vector-Jacobian product of resample_under_transform. Accumulates
/// sum_v upstream_v * d out_v / d params. Rotation is reported both as the
/// axis-angle gradient and, in `tangent_rotation`, as the gradient with respect
/// to a left increment exp(delta) * R. `grid_gradient`, when non-null, receives
/// d/d(input voxel values) added in place.
struct ResampleVjp {
  TransformGradient params{};
  Vec3 tangent_rotation = Vec3::Zero();
};
ResampleVjp resample_vjp(const SdfGrid& grid, const RigidTransform& t, std::span<const double> upstream,
                         VoxelGrid* grid_gradient = nullptr);

// ---------------------------------------------------------------------------
// Isosurface & diagnostics

/// Isosurface of channel 0 in metric coordinates. Each lattice cube is split
/// into six tetrahedra around its main diagonal; the mesh is watertight.
TriMesh marching_cubes(const SdfGrid& grid, double iso = 0.0);

struct EikonalStats {
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// |‖∇f‖ - 1| with central differences over interior voxels whose magnitude is
/// below the truncation minus one voxel. `include`, if given, further filters
/// voxels by index.
EikonalStats eikonal_residual(const SdfGrid& grid,
                              const std::function<bool(int, int, int)>& include = nullptr);

/// Mean of (‖∇f‖ - 1)^2 over the same region; adds its gradient to `gradient`.
double eikonal_loss(const SdfGrid& grid, VoxelGrid* gradient);

}  // namespace hop
