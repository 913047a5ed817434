#pragma once

#include <string>
#include <vector>

#include "hop/hand_model.hpp"
#include "hop/latent_codec.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

inline constexpr int kInteractionChannels = kLatentChannels + kJoints;

/// Contiguous run of channels with its value band.
struct ChannelGroup {
  std::string name;
  int begin = 0;
  int count = 0;
  double lo = -1.0, hi = 1.0;
  bool operator==(const ChannelGroup&) const = default;
};

struct ChannelLayout {
  std::vector<ChannelGroup> groups;
  /// object latent (3) followed by skeletal channels (15), both in [-1, 1].
  static ChannelLayout canonical();
  int channels() const;
  bool operator==(const ChannelLayout&) const = default;
};

struct InteractionGrid {
  VoxelGrid data;
  ChannelLayout layout = ChannelLayout::canonical();
};

/// Throws ShapeMismatch if the layout is not canonical or the channel count
/// disagrees; with `band_tolerance` >= 0, also if any group leaves its band by
/// more than that.
void validate_interaction_grid(const InteractionGrid& x, double band_tolerance = -1.0);

/// Skeletal value in [0, 4] <-> band value in [-1, 1].
inline double hand_to_band(double v) { return 0.5 * v - 1.0; }
inline double band_to_hand(double b) { return 2.0 * (b + 1.0); }

/// Concatenates a latent grid with the skeletal field of `pose` on the latent lattice.
InteractionGrid assemble_interaction_grid(const LatentGrid& latent, const HandSkeleton& skeleton,
                                          const HandPose& pose);

/// Hand channels of an interaction grid as a skeletal field.
VoxelGrid hand_field_of(const InteractionGrid& x);
/// Object latent channels of an interaction grid.
LatentGrid latent_of(const InteractionGrid& x);

/// Forward pass of x = (E(T G), H(θ)), keeping what the adjoint needs.
struct AssembledInteraction {
  InteractionGrid grid;
  SdfGrid object_in_hand;  ///< T applied to the object grid
  HandKinematics kinematics;
};

AssembledInteraction assemble_interaction(const Codec& codec, const SdfGrid& object, const RigidTransform& t,
                                          const HandSkeleton& skeleton, const HandPose& pose);

struct InteractionGradient {
  TransformGradient transform{};     ///< axis-angle, translation (m), scale
  Vec3 rotation_tangent = Vec3::Zero();  ///< for left increments exp(δ)R
  PoseVector theta = PoseVector::Zero();
};

/// Adjoint of assemble_interaction for upstream dL/dx. When `object_gradient`
/// is non-null it receives dL/d(object voxels), added in place.
InteractionGradient interaction_vjp(const Codec& codec, const SdfGrid& object, const RigidTransform& t,
                                    const HandSkeleton& skeleton, const AssembledInteraction& forward,
                                    const VoxelGrid& upstream, SdfGrid* object_gradient = nullptr);

}  // namespace hop
