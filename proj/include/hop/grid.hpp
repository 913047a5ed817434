#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hop/math.hpp"

namespace hop {

/// Regular lattice over the cube [-half_extent, half_extent]^3 (meters).
/// Voxel centers sit at cell midpoints; x is the fastest-varying axis.
struct GridSpec {
  std::array<int, 3> dims{64, 64, 64};
  double half_extent = 0.15;

  static GridSpec cube(int resolution, double half_extent = 0.15) {
    return GridSpec{{resolution, resolution, resolution}, half_extent};
  }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  /// Voxel pitch along `axis` in normalized units (half-extent = 1).
  double pitch_normalized(int axis) const { return 2.0 / dims[axis]; }
  /// Voxel pitch along `axis` in meters.
  double pitch(int axis) const { return 2.0 * half_extent / dims[axis]; }
  double center_normalized(int axis, int idx) const { return -1.0 + (idx + 0.5) * pitch_normalized(axis); }
  Vec3 center_normalized(int i, int j, int k) const {
    return {center_normalized(0, i), center_normalized(1, j), center_normalized(2, k)};
  }
  Vec3 center(int i, int j, int k) const { return half_extent * center_normalized(i, j, k); }

  bool valid() const;
  bool operator==(const GridSpec& other) const = default;
};

/// Multi-channel voxel grid, channel-major, x fastest within a channel.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(const GridSpec& spec, int channels, double fill = 0.0);

  const GridSpec& spec() const { return spec_; }
  int channels() const { return channels_; }
  std::size_t voxel_count() const { return spec_.voxel_count(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> channel(int c) { return {data_.data() + c * voxel_count(), voxel_count()}; }
  std::span<const double> channel(int c) const { return {data_.data() + c * voxel_count(), voxel_count()}; }

  double& at(int c, int i, int j, int k) { return data_[c * voxel_count() + spec_.index(i, j, k)]; }
  double at(int c, int i, int j, int k) const { return data_[c * voxel_count() + spec_.index(i, j, k)]; }

  bool all_finite() const;
  bool operator==(const VoxelGrid& other) const = default;

 private:
  GridSpec spec_{};
  int channels_ = 0;
  std::vector<double> data_;
};

/// "HOPG" container: magic, u32 version, u32 dims[3], u32 channels,
/// f32 half-extent, then channel-major little-endian f32 values, x fastest.
inline constexpr std::uint32_t kHopgVersion = 1;

std::vector<std::uint8_t> encode_hopg(const VoxelGrid& grid);
VoxelGrid decode_hopg(std::span<const std::uint8_t> bytes);
void write_hopg(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_hopg(const std::filesystem::path& path);

/// Rounds every value to float precision, i.e. what a HOPG round trip yields.
void quantize_to_float(VoxelGrid& grid);

}  // namespace hop
