#include "hop/latent_codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "hop/error.hpp"

namespace hop {

namespace {

void require_block_grid(const GridSpec& s) {
  for (int a = 0; a < 3; ++a)
    if (s.dims[a] < kLatentBlock || s.dims[a] % kLatentBlock != 0)
      fail(ErrorCode::BadResolution, "object grid resolution must be a positive multiple of 4 on every axis");
}

template <class F>
void for_each_block_voxel(const GridSpec& object, int bi, int bj, int bk, F&& f) {
  for (int k = 0; k < kLatentBlock; ++k)
    for (int j = 0; j < kLatentBlock; ++j)
      for (int i = 0; i < kLatentBlock; ++i)
        f(object.index(bi * kLatentBlock + i, bj * kLatentBlock + j, bk * kLatentBlock + k));
}

// Shift d so that mean(clamp(u + d, -1, 1)) == target.
double block_offset(const std::array<double, 64>& u, double target) {
  auto mean_at = [&](double d) {
    double s = 0.0;
    for (double v : u) s += std::clamp(v + d, -kSdfTruncation, kSdfTruncation);
    return s / 64.0;
  };
  double lo = -2.0 * kSdfTruncation - 1.0, hi = 2.0 * kSdfTruncation + 1.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < target ? lo : hi) = mid;
  }
  double d = 0.5 * (lo + hi);
  // Final exact step on the active linear piece.
  int active = 0;
  for (double v : u) active += (v + d > -kSdfTruncation && v + d < kSdfTruncation);
  if (active > 0) d += (target - mean_at(d)) * 64.0 / active;
  return d;
}

}  // namespace

GridSpec BlockCodec::latent_spec(const GridSpec& object) const {
  require_block_grid(object);
  GridSpec s = object;
  for (int a = 0; a < 3; ++a) s.dims[a] /= kLatentBlock;
  return s;
}

GridSpec BlockCodec::object_spec(const GridSpec& latent) const {
  GridSpec s = latent;
  for (int a = 0; a < 3; ++a) s.dims[a] *= kLatentBlock;
  return s;
}

LatentGrid BlockCodec::encode(const SdfGrid& grid) const {
  require(grid.channels() == 1, ErrorCode::ShapeMismatch, "encode expects a single-channel SDF grid");
  const GridSpec ls = latent_spec(grid.spec());
  LatentGrid z(ls, kLatentChannels);
  const auto v = grid.channel(0);
  for (int bk = 0; bk < ls.dims[2]; ++bk)
    for (int bj = 0; bj < ls.dims[1]; ++bj)
      for (int bi = 0; bi < ls.dims[0]; ++bi) {
        double sum = 0.0, mn = std::numeric_limits<double>::infinity(), mx = -mn;
        for_each_block_voxel(grid.spec(), bi, bj, bk, [&](std::size_t idx) {
          sum += v[idx];
          mn = std::min(mn, v[idx]);
          mx = std::max(mx, v[idx]);
        });
        z.at(0, bi, bj, bk) = sum / 64.0;
        z.at(1, bi, bj, bk) = mn;
        z.at(2, bi, bj, bk) = mx;
      }
  return z;
}

SdfGrid BlockCodec::decode(const LatentGrid& latent) const {
  require(latent.channels() >= 1, ErrorCode::ShapeMismatch, "latent grid has no channels");
  const GridSpec ls = latent.spec();
  const GridSpec os = object_spec(ls);
  SdfGrid out(os, 1);
  auto o = out.channel(0);
  for (int bk = 0; bk < ls.dims[2]; ++bk)
    for (int bj = 0; bj < ls.dims[1]; ++bj)
      for (int bi = 0; bi < ls.dims[0]; ++bi) {
        std::array<double, 64> u;
        std::array<std::size_t, 64> idx;
        int n = 0;
        for_each_block_voxel(os, bi, bj, bk, [&](std::size_t id) {
          const int i = static_cast<int>(id % os.dims[0]);
          const int j = static_cast<int>((id / os.dims[0]) % os.dims[1]);
          const int k = static_cast<int>(id / (static_cast<std::size_t>(os.dims[0]) * os.dims[1]));
          u[n] = sample_trilinear(latent, 0, os.center_normalized(i, j, k)).value;
          idx[n++] = id;
        });
        const double target = std::clamp(latent.at(0, bi, bj, bk), -kSdfTruncation, kSdfTruncation);
        const double d = block_offset(u, target);
        for (int m = 0; m < 64; ++m) o[idx[m]] = truncate_sdf(u[m] + d);
      }
  return out;
}

SdfGrid BlockCodec::encode_vjp(const SdfGrid& grid, const LatentGrid& upstream) const {
  const GridSpec ls = latent_spec(grid.spec());
  require(upstream.spec() == ls && upstream.channels() == kLatentChannels, ErrorCode::ShapeMismatch,
          "encode_vjp: upstream does not match the latent shape");
  SdfGrid g(grid.spec(), 1);
  auto out = g.channel(0);
  const auto v = grid.channel(0);
  for (int bk = 0; bk < ls.dims[2]; ++bk)
    for (int bj = 0; bj < ls.dims[1]; ++bj)
      for (int bi = 0; bi < ls.dims[0]; ++bi) {
        const double gm = upstream.at(0, bi, bj, bk) / 64.0;
        std::size_t amin = 0, amax = 0;
        double mn = std::numeric_limits<double>::infinity(), mx = -mn;
        for_each_block_voxel(grid.spec(), bi, bj, bk, [&](std::size_t idx) {
          out[idx] += gm;
          if (v[idx] < mn) mn = v[idx], amin = idx;
          if (v[idx] > mx) mx = v[idx], amax = idx;
        });
        out[amin] += upstream.at(1, bi, bj, bk);
        out[amax] += upstream.at(2, bi, bj, bk);
      }
  return g;
}

namespace {
void require_identity_grid(const GridSpec& s) {
  if (s.dims != std::array<int, 3>{16, 16, 16}) fail(ErrorCode::BadResolution, "identity codec expects a 16^3 grid");
}
}  // namespace

LatentGrid IdentityCodec::encode(const SdfGrid& grid) const {
  require_identity_grid(grid.spec());
  require(grid.channels() == 1, ErrorCode::ShapeMismatch, "encode expects a single-channel SDF grid");
  LatentGrid z(grid.spec(), kLatentChannels);
  for (int c = 0; c < kLatentChannels; ++c) std::ranges::copy(grid.channel(0), z.channel(c).begin());
  return z;
}

SdfGrid IdentityCodec::decode(const LatentGrid& latent) const {
  require_identity_grid(latent.spec());
  SdfGrid out(latent.spec(), 1);
  std::ranges::copy(latent.channel(0), out.channel(0).begin());
  return out;
}

SdfGrid IdentityCodec::encode_vjp(const SdfGrid& grid, const LatentGrid& upstream) const {
  require_identity_grid(grid.spec());
  require(upstream.spec() == grid.spec() && upstream.channels() == kLatentChannels, ErrorCode::ShapeMismatch,
          "encode_vjp: upstream does not match the latent shape");
  SdfGrid g(grid.spec(), 1);
  auto out = g.channel(0);
  for (int c = 0; c < kLatentChannels; ++c) {
    const auto u = upstream.channel(c);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += u[i];
  }
  return g;
}

std::unique_ptr<Codec> make_codec(std::string_view name) {
  if (name == "block") return std::make_unique<BlockCodec>();
  if (name == "identity") return std::make_unique<IdentityCodec>();
  fail(ErrorCode::InvalidConfig, "unknown codec '" + std::string(name) + "'");
}

}  // namespace hop
