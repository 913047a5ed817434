#include "hop/pointcloud.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "hop/error.hpp"

namespace hop {

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int l = build(idx, begin, mid, depth + 1);
  const int r = build(idx, mid + 1, end, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void KdTree::search(int node, const Vec3& q, int& best, double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  const double d2 = (p - q).squaredNorm();
  if (d2 < best_d2) best_d2 = d2, best = n.point;
  const double diff = q[n.axis] - p[n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff < best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& q) const {
  require(!points_.empty(), ErrorCode::EmptySurface, "nearest-neighbour query on an empty point set");
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, best, best_d2);
  return {static_cast<std::size_t>(best), std::sqrt(best_d2)};
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (mesh.empty()) fail(ErrorCode::EmptySurface, "cannot sample an empty surface");
  std::vector<double> cdf;
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    total += 0.5 * (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a).norm();
    cdf.push_back(total);
  }
  if (!(total > 0.0)) fail(ErrorCode::EmptySurface, "surface has zero area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const double u = unit(rng) * total;
    const std::size_t t = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(),
                                                mesh.faces.size() - 1);
    double r1 = unit(rng), r2 = unit(rng);
    if (r1 + r2 > 1.0) r1 = 1.0 - r1, r2 = 1.0 - r2;
    const auto& f = mesh.faces[t];
    const Vec3& a = mesh.vertices[f[0]];
    out.push_back(a + r1 * (mesh.vertices[f[1]] - a) + r2 * (mesh.vertices[f[2]] - a));
  }
  return out;
}

Similarity umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, bool with_scale) {
  require(src.size() == dst.size() && !src.empty(), ErrorCode::InvalidArgument, "umeyama needs matched point sets");
  const double n = static_cast<double>(src.size());
  Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) ms += src[i], md += dst[i];
  ms /= n;
  md /= n;
  Mat3 cov = Mat3::Zero();
  double var = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    cov += (dst[i] - md) * (src[i] - ms).transpose();
    var += (src[i] - ms).squaredNorm();
  }
  cov /= n;
  var /= n;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2, 2) = -1.0;
  Similarity s;
  s.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  s.scale = with_scale && var > 0 ? (svd.singularValues().asDiagonal() * d).trace() / var : 1.0;
  s.translation = md - s.scale * s.rotation * ms;
  return s;
}

std::vector<Vec3> transformed(const std::vector<Vec3>& points, const Similarity& s) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(s.apply(p));
  return out;
}

Similarity scaled_icp(const std::vector<Vec3>& source, const std::vector<Vec3>& target, const IcpOptions& options) {
  if (source.empty() || target.empty()) fail(ErrorCode::EmptySurface, "ICP on an empty point set");
  auto centroid = [](const std::vector<Vec3>& p) {
    Vec3 c = Vec3::Zero();
    for (const auto& x : p) c += x;
    return Vec3(c / static_cast<double>(p.size()));
  };
  auto rms = [](const std::vector<Vec3>& p, const Vec3& c) {
    double s = 0.0;
    for (const auto& x : p) s += (x - c).squaredNorm();
    return std::sqrt(s / static_cast<double>(p.size()));
  };
  const Vec3 cs = centroid(source), ct = centroid(target);
  Similarity current;
  if (options.with_scale) {
    const double rs = rms(source, cs);
    current.scale = rs > 0 ? rms(target, ct) / rs : 1.0;
  }
  current.translation = ct - current.scale * cs;

  // Correspondences in both directions.
  const KdTree tree(target);
  double previous = std::numeric_limits<double>::infinity();
  std::vector<Vec3> src, dst;
  for (int it = 0; it < options.iterations; ++it) {
    const auto moved = transformed(source, current);
    const KdTree back(moved);
    src.assign(source.begin(), source.end());
    dst.clear();
    double err = 0.0;
    for (const auto& p : moved) {
      const auto [idx, d] = tree.nearest(p);
      dst.push_back(target[idx]);
      err += d * d;
    }
    for (const auto& q : target) {
      const auto [idx, d] = back.nearest(q);
      src.push_back(source[idx]);
      dst.push_back(q);
      err += d * d;
    }
    err /= static_cast<double>(dst.size());
    current = umeyama(src, dst, options.with_scale);
    if (std::abs(previous - err) <= options.tolerance * std::max(1.0, err)) break;
    previous = err;
  }
  return current;
}

namespace {

using Distance = std::function<double(const Vec3&)>;

CloudComparison compare_with(const std::vector<Vec3>& pred, const Distance& to_gt, const std::vector<Vec3>& gt,
                             const Distance& to_pred) {
  if (pred.empty() || gt.empty()) fail(ErrorCode::EmptySurface, "point cloud comparison on an empty set");
  CloudComparison c;
  double sp = 0.0, sg = 0.0;
  std::size_t p5 = 0, p10 = 0, r5 = 0, r10 = 0;
  for (const auto& p : pred) {
    const double d = to_gt(p);
    sp += d;
    p5 += d < 0.005;
    p10 += d < 0.010;
  }
  for (const auto& g : gt) {
    const double d = to_pred(g);
    sg += d;
    r5 += d < 0.005;
    r10 += d < 0.010;
  }
  c.chamfer = sp / pred.size() + sg / gt.size();
  auto f = [](double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; };
  c.precision_5 = static_cast<double>(p5) / pred.size();
  c.recall_5 = static_cast<double>(r5) / gt.size();
  c.precision_10 = static_cast<double>(p10) / pred.size();
  c.recall_10 = static_cast<double>(r10) / gt.size();
  c.fscore_5 = f(c.precision_5, c.recall_5);
  c.fscore_10 = f(c.precision_10, c.recall_10);
  return c;
}

}  // namespace

CloudComparison compare_clouds(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.empty() || gt.empty()) fail(ErrorCode::EmptySurface, "point cloud comparison on an empty set");
  const KdTree tp(pred), tg(gt);
  return compare_with(
      pred, [&](const Vec3& p) { return tg.nearest(p).second; }, gt, [&](const Vec3& g) { return tp.nearest(g).second; });
}

TriangleTree::TriangleTree(TriMesh mesh) : mesh_(std::move(mesh)) {
  if (mesh_.empty()) fail(ErrorCode::EmptySurface, "distance tree over an empty mesh");
  order_.resize(mesh_.faces.size());
  centroid_.resize(mesh_.faces.size());
  for (std::size_t f = 0; f < mesh_.faces.size(); ++f) {
    order_[f] = static_cast<int>(f);
    const auto& t = mesh_.faces[f];
    centroid_[f] = (mesh_.vertices[t[0]] + mesh_.vertices[t[1]] + mesh_.vertices[t[2]]) / 3.0;
  }
  nodes_.reserve(2 * mesh_.faces.size() / 4 + 2);
  build(0, static_cast<int>(order_.size()));
}

int TriangleTree::build(int begin, int end) {
  Node n;
  n.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  n.hi = -n.lo;
  for (int i = begin; i < end; ++i)
    for (int v : mesh_.faces[order_[i]]) n.lo = n.lo.cwiseMin(mesh_.vertices[v]), n.hi = n.hi.cwiseMax(mesh_.vertices[v]);
  n.begin = begin, n.end = end;
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(n);
  if (end - begin <= 4) return id;
  int axis;
  (n.hi - n.lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return centroid_[a][axis] < centroid_[b][axis]; });
  const int l = build(begin, mid);
  const int r = build(mid, end);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void TriangleTree::search(int node, const Vec3& q, double& best) const {
  const Node& n = nodes_[node];
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const auto& t = mesh_.faces[order_[i]];
      best = std::min(best, point_triangle_distance(q, mesh_.vertices[t[0]], mesh_.vertices[t[1]], mesh_.vertices[t[2]]));
    }
    return;
  }
  auto box_distance = [&](const Node& c) {
    return (q.cwiseMax(c.lo).cwiseMin(c.hi) - q).norm();
  };
  const double dl = box_distance(nodes_[n.left]), dr = box_distance(nodes_[n.right]);
  const int first = dl <= dr ? n.left : n.right, second = dl <= dr ? n.right : n.left;
  if (std::min(dl, dr) < best) search(first, q, best);
  if (std::max(dl, dr) < best) search(second, q, best);
}

double TriangleTree::distance(const Vec3& q) const {
  double best = std::numeric_limits<double>::infinity();
  search(0, q, best);
  return best;
}

CloudComparison compare_surfaces(const std::vector<Vec3>& pred, const TriangleTree& pred_surface,
                                 const std::vector<Vec3>& gt, const TriangleTree& gt_surface) {
  return compare_with(
      pred, [&](const Vec3& p) { return gt_surface.distance(p); }, gt,
      [&](const Vec3& g) { return pred_surface.distance(g); });
}

}  // namespace hop
