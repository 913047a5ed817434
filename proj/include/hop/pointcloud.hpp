#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hop/math.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

/// Static 3-d tree for nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }
  /// Index of the nearest point and its distance.
  std::pair<std::size_t, double> nearest(const Vec3& q) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vec3& q, int& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Area-weighted uniform samples on the mesh surface.
std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed);

/// x -> scale * R x + t
struct Similarity {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Closed-form least-squares similarity mapping src[i] onto dst[i].
Similarity umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, bool with_scale);

struct IcpOptions {
  int iterations = 50;
  bool with_scale = true;
  double tolerance = 1e-10;
};

/// Aligns `source` onto `target`; starts from centroid and RMS-radius alignment.
Similarity scaled_icp(const std::vector<Vec3>& source, const std::vector<Vec3>& target, const IcpOptions& options = {});

std::vector<Vec3> transformed(const std::vector<Vec3>& points, const Similarity& s);

struct CloudComparison {
  double chamfer = 0.0;  ///< mean pred->gt + mean gt->pred, same unit as input
  double precision_5 = 0, recall_5 = 0, fscore_5 = 0;
  double precision_10 = 0, recall_10 = 0, fscore_10 = 0;
};

/// Distances in meters; thresholds 5 mm and 10 mm.
CloudComparison compare_clouds(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

/// Exact point-to-triangle-mesh distance through a bounding-box tree.
class TriangleTree {
 public:
  explicit TriangleTree(TriMesh mesh);
  const TriMesh& mesh() const { return mesh_; }
  double distance(const Vec3& q) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };
  int build(int begin, int end);
  void search(int node, const Vec3& q, double& best) const;

  TriMesh mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroid_;
  std::vector<Node> nodes_;
};

/// Like compare_clouds, with each sample measured against the opposite
/// surface itself rather than its samples.
CloudComparison compare_surfaces(const std::vector<Vec3>& pred, const TriangleTree& pred_surface,
                                 const std::vector<Vec3>& gt, const TriangleTree& gt_surface);

}  // namespace hop
