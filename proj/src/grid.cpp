#include "hop/grid.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "hop/error.hpp"

namespace hop {

bool GridSpec::valid() const {
  return dims[0] >= 2 && dims[1] >= 2 && dims[2] >= 2 && std::isfinite(half_extent) && half_extent > 0.0;
}

VoxelGrid::VoxelGrid(const GridSpec& spec, int channels, double fill)
    : spec_(spec), channels_(channels) {
  require(spec.valid(), ErrorCode::BadResolution, "grid resolution must be >= 2 per axis with positive extent");
  require(channels > 0, ErrorCode::InvalidArgument, "grid needs at least one channel");
  data_.assign(static_cast<std::size_t>(channels) * spec.voxel_count(), fill);
}

bool VoxelGrid::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in[offset + b]) << (8 * b);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_hopg(const VoxelGrid& grid) {
  std::vector<std::uint8_t> out;
  out.reserve(28 + 4 * grid.size());
  for (char c : {'H', 'O', 'P', 'G'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kHopgVersion);
  for (int a = 0; a < 3; ++a) put_u32(out, static_cast<std::uint32_t>(grid.spec().dims[a]));
  put_u32(out, static_cast<std::uint32_t>(grid.channels()));
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(grid.spec().half_extent)));
  for (double v : grid.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

VoxelGrid decode_hopg(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 28 && std::memcmp(bytes.data(), "HOPG", 4) == 0, ErrorCode::IoFailure,
          "not a HOPG grid (bad magic)");
  require(get_u32(bytes, 4) == kHopgVersion, ErrorCode::IoFailure, "unsupported HOPG version");
  GridSpec spec;
  for (int a = 0; a < 3; ++a) spec.dims[a] = static_cast<int>(get_u32(bytes, 8 + 4 * a));
  const auto channels = static_cast<int>(get_u32(bytes, 20));
  {
    // The header holds an f32; recover the short decimal it was written from.
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, std::bit_cast<float>(get_u32(bytes, 24)));
    *r.ptr = '\0';
    spec.half_extent = std::strtod(buf, nullptr);
  }
  require(spec.valid() && channels > 0, ErrorCode::IoFailure, "HOPG header describes an invalid grid");
  const std::size_t count = static_cast<std::size_t>(channels) * spec.voxel_count();
  require(bytes.size() == 28 + 4 * count, ErrorCode::IoFailure, "HOPG payload size does not match header");
  VoxelGrid grid(spec, channels);
  auto values = grid.values();
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(get_u32(bytes, 28 + 4 * i));
  return grid;
}

void write_hopg(const std::filesystem::path& path, const VoxelGrid& grid) {
  const auto bytes = encode_hopg(grid);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, "write failed: " + path.string());
}

VoxelGrid read_hopg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open grid: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_hopg(bytes);
}

void quantize_to_float(VoxelGrid& grid) {
  for (double& v : grid.values()) v = static_cast<float>(v);
}

}  // namespace hop
