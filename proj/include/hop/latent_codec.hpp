#pragma once

#include <memory>

#include "hop/grid.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

/// Three-channel latent lattice (a quarter of the object resolution for the
/// block codec).
using LatentGrid = VoxelGrid;

inline constexpr int kLatentChannels = 3;
inline constexpr int kLatentBlock = 4;

/// Encoder/decoder pair between object SDF grids and latent grids.
class Codec {
 public:
  virtual ~Codec() = default;
  virtual LatentGrid encode(const SdfGrid& grid) const = 0;
  virtual SdfGrid decode(const LatentGrid& latent) const = 0;
  /// Adjoint of encode at `grid`: d(sum upstream * encode(grid)) / d grid.
  virtual SdfGrid encode_vjp(const SdfGrid& grid, const LatentGrid& upstream) const = 0;
  virtual GridSpec latent_spec(const GridSpec& object) const = 0;
  virtual GridSpec object_spec(const GridSpec& latent) const = 0;
};

/// Per 4^3 block: (mean, min, max). Decoding upsamples the mean trilinearly
/// and shifts each block so its mean after truncation matches the latent mean.
class BlockCodec final : public Codec {
 public:
  LatentGrid encode(const SdfGrid& grid) const override;
  SdfGrid decode(const LatentGrid& latent) const override;
  SdfGrid encode_vjp(const SdfGrid& grid, const LatentGrid& upstream) const override;
  GridSpec latent_spec(const GridSpec& object) const override;
  GridSpec object_spec(const GridSpec& latent) const override;
};

/// Passthrough on 16^3 grids; the single channel is replicated three times.
class IdentityCodec final : public Codec {
 public:
  LatentGrid encode(const SdfGrid& grid) const override;
  SdfGrid decode(const LatentGrid& latent) const override;
  SdfGrid encode_vjp(const SdfGrid& grid, const LatentGrid& upstream) const override;
  GridSpec latent_spec(const GridSpec& object) const override { return object; }
  GridSpec object_spec(const GridSpec& latent) const override { return latent; }
};

std::unique_ptr<Codec> make_codec(std::string_view name);

}  // namespace hop
