#include <algorithm>
#include <cmath>

#include "hop/adam.hpp"
#include "hop/error.hpp"
#include "hop/hand_model.hpp"
#include "hop/kernels.hpp"

namespace hop {

namespace {

void check_field(const HandSkeleton&, const VoxelGrid& field) {
  require(field.channels() == kJoints, ErrorCode::ShapeMismatch, "skeletal field must have 15 channels");
  require(field.spec().valid(), ErrorCode::InvalidShape, "skeletal field has an invalid grid");
}

}  // namespace

FieldResidualGradient::FieldResidualGradient(const VoxelGrid& field) : spec_(field.spec()) {
  require(field.channels() == kJoints, ErrorCode::ShapeMismatch, "skeletal field must have 15 channels");
  const int nx = spec_.dims[0], ny = spec_.dims[1], nz = spec_.dims[2];
  for (int i = 0; i < nx; ++i) x_.push_back(spec_.center_normalized(0, i));
  for (int j = 0; j < ny; ++j) y_.push_back(spec_.center_normalized(1, j));
  for (int k = 0; k < nz; ++k) z_.push_back(spec_.center_normalized(2, k));
  const std::size_t n = spec_.voxel_count();
  prefix_h_.resize(n * kJoints);
  prefix_hx_.resize(n * kJoints);
  totals_.assign(kJoints, Eigen::Vector4d::Zero());
  for (int c = 0; c < kJoints; ++c) {
    const auto h = field.channel(c);
    double* ph = prefix_h_.data() + c * n;
    double* phx = prefix_hx_.data() + c * n;
    Eigen::Vector4d& tot = totals_[c];
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j) {
        const std::size_t row = spec_.index(0, j, k);
        double s = 0.0, sx = 0.0;
        for (int i = 0; i < nx; ++i) {
          const double v = h[row + i];
          s += v;
          sx += v * x_[i];
          ph[row + i] = s;
          phx[row + i] = sx;
        }
        tot += Eigen::Vector4d(s, sx, s * y_[j], s * z_[k]);
      }
  }
}

std::array<Vec3, kJoints> FieldResidualGradient::operator()(std::span<const Vec3> joints) const {
  require(joints.size() == kJoints, ErrorCode::ShapeMismatch, "expected 15 joints");
  const int nx = spec_.dims[0], ny = spec_.dims[1], nz = spec_.dims[2];
  const std::size_t n = spec_.voxel_count();
  const double pitch = spec_.pitch_normalized(0);
  const double norm = 1.0 / (static_cast<double>(n) * kJoints);
  std::vector<double> dx(nx), p1(nx), p2(nx), p3(nx), dy2(ny), dz2(nz);
  std::array<Vec3, kJoints> grad;

  for (int c = 0; c < kJoints; ++c) {
    const Vec3 jn = joints[c] / spec_.half_extent;
    // Axis moments of the offsets d = x - j.
    Vec3 m1 = Vec3::Zero(), m2 = Vec3::Zero(), m3 = Vec3::Zero();
    double s1 = 0, s2 = 0, s3 = 0;
    for (int i = 0; i < nx; ++i) {
      const double d = x_[i] - jn.x();
      dx[i] = d;
      s1 += d;
      s2 += d * d;
      s3 += d * d * d;
      p1[i] = s1;
      p2[i] = s2;
      p3[i] = s3;
    }
    m1.x() = s1, m2.x() = s2, m3.x() = s3;
    for (int j = 0; j < ny; ++j) {
      const double d = y_[j] - jn.y();
      dy2[j] = d * d;
      m1.y() += d, m2.y() += d * d, m3.y() += d * d * d;
    }
    for (int k = 0; k < nz; ++k) {
      const double d = z_[k] - jn.z();
      dz2[k] = d * d;
      m1.z() += d, m2.z() += d * d, m3.z() += d * d * d;
    }
    const Vec3 cnt(nx, ny, nz);
    // sum over all voxels of ‖d‖² d
    Vec3 total;
    for (int a = 0; a < 3; ++a) {
      const int b = (a + 1) % 3, e = (a + 2) % 3;
      total[a] = m3[a] * cnt[b] * cnt[e] + m1[a] * (m2[b] * cnt[e] + m2[e] * cnt[b]);
    }
    const Eigen::Vector4d& t = totals_[c];
    total -= Vec3(t[1], t[2], t[3]) - jn * t[0];

    // Remove the voxels where the field saturates.
    const double max_dx2 = std::max(dx.front() * dx.front(), dx.back() * dx.back());
    const double* ph = prefix_h_.data() + c * n;
    const double* phx = prefix_hx_.data() + c * n;
    auto range = [](const std::vector<double>& p, int lo, int hi) { return p[hi] - (lo > 0 ? p[lo - 1] : 0.0); };
    auto row_range = [](const double* p, int lo, int hi) { return p[hi] - (lo > 0 ? p[lo - 1] : 0.0); };
    Vec3 clamped = Vec3::Zero();
    for (int k = 0; k < nz; ++k) {
      const double dz = z_[k] - jn.z();
      for (int j = 0; j < ny; ++j) {
        const double cyz = dy2[j] + dz2[k];
        if (max_dx2 + cyz < kSkeletalClamp) continue;
        const double dy = y_[j] - jn.y();
        const std::size_t row = spec_.index(0, j, k);
        // Saturated voxels of this row: [0, lo) and (hi, nx-1].
        int lo = nx, hi = nx - 1;
        if (cyz < kSkeletalClamp) {
          const double w = std::sqrt(kSkeletalClamp - cyz);
          lo = static_cast<int>(std::floor((jn.x() - w + 1.0) / pitch - 0.5)) + 1;
          hi = static_cast<int>(std::ceil((jn.x() + w + 1.0) / pitch - 0.5)) - 1;
          lo = std::clamp(lo, 0, nx);
          hi = std::clamp(hi, -1, nx - 1);
          if (lo > hi) lo = nx, hi = nx - 1;
        }
        auto add = [&](int a, int b) {
          if (a > b) return;
          const double cnt_k = b - a + 1;
          const double sd = range(p1, a, b), sd2 = range(p2, a, b), sd3 = range(p3, a, b);
          const double sh = row_range(ph + row, a, b);
          const double shd = row_range(phx + row, a, b) - jn.x() * sh;
          clamped.x() += sd3 + cyz * sd - shd;
          const double common = sd2 + cyz * cnt_k - sh;
          clamped.y() += dy * common;
          clamped.z() += dz * common;
        };
        if (lo >= nx) {
          add(0, nx - 1);
        } else {
          add(0, lo - 1);
          add(hi + 1, nx - 1);
        }
      }
    }
    grad[c] = (-4.0 * norm / spec_.half_extent) * (total - clamped);
  }
  return grad;
}

double field_residual(const HandSkeleton& skeleton, const HandPose& pose, const VoxelGrid& field) {
  check_field(skeleton, field);
  const GridSpec& spec = field.spec();
  const auto joints = forward_kinematics(skeleton, pose);
  const int nx = spec.dims[0];
  std::vector<double> dx2(nx);
  double sum = 0.0;
  for (int c = 0; c < kJoints; ++c) {
    const Vec3 jn = joints[c] / spec.half_extent;
    for (int i = 0; i < nx; ++i) {
      const double d = spec.center_normalized(0, i) - jn.x();
      dx2[i] = d * d;
    }
    const auto target = field.channel(c);
    for (int k = 0; k < spec.dims[2]; ++k) {
      const double dz = spec.center_normalized(2, k) - jn.z();
      for (int j = 0; j < spec.dims[1]; ++j) {
        const double dy = spec.center_normalized(1, j) - jn.y();
        sum += kernels::clamped_residual_row(dx2, dy * dy + dz * dz, kSkeletalClamp,
                                             target.subspan(spec.index(0, j, k), static_cast<std::size_t>(nx)));
      }
    }
  }
  return sum / (static_cast<double>(spec.voxel_count()) * kJoints);
}

PoseFitResult pose_from_field(const HandSkeleton& skeleton, const VoxelGrid& field, const HandPose& init,
                              const PoseFitOptions& options) {
  check_field(skeleton, field);
  require(options.steps >= 0 && options.lr > 0 && options.reg_weight >= 0, ErrorCode::InvalidArgument,
          "pose fit options out of range");
  require(init.is_finite(), ErrorCode::InvalidArgument, "initial pose is not finite");
  const FieldResidualGradient gradient(field);
  HandPose pose = init.clamped(skeleton.limits);
  Adam adam(kPoseDofs, options.lr);
  PoseVector g;
  for (int step = 0; step < options.steps; ++step) {
    const HandKinematics kin = pose_hand(skeleton, pose);
    const auto gj = gradient(kin.joints);
    g = 2.0 * options.reg_weight * pose.theta;
    for (int f = 0; f < kFingers; ++f)
      for (int s = 1; s < kJointsPerFinger; ++s) {
        const int joint = 3 * f + s;
        g += kin.point_jacobian(kin.joints[joint], kBonesPerFinger * f + s).transpose() * gj[joint];
      }
    if (!g.allFinite()) fail(ErrorCode::NonFiniteObjective, "pose fit gradient is not finite");
    adam.step(std::span<double>(pose.theta.data(), kPoseDofs), std::span<const double>(g.data(), kPoseDofs));
    pose = pose.clamped(skeleton.limits);
  }
  PoseFitResult out;
  out.pose = pose;
  out.residual = field_residual(skeleton, pose, field);
  out.objective = out.residual + options.reg_weight * pose.theta.squaredNorm();
  if (!std::isfinite(out.objective)) fail(ErrorCode::NonFiniteObjective, "pose fit objective is not finite");
  return out;
}

}  // namespace hop
