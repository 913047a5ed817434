#include "hop/interaction.hpp"

#include <algorithm>
#include <cmath>

#include "hop/error.hpp"

namespace hop {

ChannelLayout ChannelLayout::canonical() {
  return {{{"object", 0, kLatentChannels, -1.0, 1.0}, {"hand", kLatentChannels, kJoints, -1.0, 1.0}}};
}

int ChannelLayout::channels() const {
  int n = 0;
  for (const auto& g : groups) n += g.count;
  return n;
}

void validate_interaction_grid(const InteractionGrid& x, double band_tolerance) {
  if (!(x.layout == ChannelLayout::canonical()))
    fail(ErrorCode::ShapeMismatch, "interaction grid channel layout is not object(3) | hand(15)");
  if (x.data.channels() != x.layout.channels())
    fail(ErrorCode::ShapeMismatch, "interaction grid has " + std::to_string(x.data.channels()) + " channels, expected " +
                                       std::to_string(x.layout.channels()));
  if (!x.data.all_finite()) fail(ErrorCode::ShapeMismatch, "interaction grid is not finite");
  if (band_tolerance < 0) return;
  for (const auto& g : x.layout.groups)
    for (int c = g.begin; c < g.begin + g.count; ++c)
      for (double v : x.data.channel(c))
        if (v < g.lo - band_tolerance || v > g.hi + band_tolerance)
          fail(ErrorCode::ShapeMismatch, "channel group '" + g.name + "' leaves its value band");
}

namespace {

void write_hand_channels(VoxelGrid& out, const VoxelGrid& field) {
  for (int c = 0; c < kJoints; ++c) {
    const auto src = field.channel(c);
    auto dst = out.channel(kLatentChannels + c);
    std::ranges::transform(src, dst.begin(), hand_to_band);
  }
}

}  // namespace

InteractionGrid assemble_interaction_grid(const LatentGrid& latent, const HandSkeleton& skeleton,
                                          const HandPose& pose) {
  require(latent.channels() == kLatentChannels, ErrorCode::ShapeMismatch, "latent grid must have 3 channels");
  InteractionGrid x{VoxelGrid(latent.spec(), kInteractionChannels)};
  for (int c = 0; c < kLatentChannels; ++c) std::ranges::copy(latent.channel(c), x.data.channel(c).begin());
  write_hand_channels(x.data, skeletal_field(skeleton, pose, latent.spec()));
  return x;
}

VoxelGrid hand_field_of(const InteractionGrid& x) {
  validate_interaction_grid(x);
  VoxelGrid f(x.data.spec(), kJoints);
  for (int c = 0; c < kJoints; ++c)
    std::ranges::transform(x.data.channel(kLatentChannels + c), f.channel(c).begin(), band_to_hand);
  return f;
}

LatentGrid latent_of(const InteractionGrid& x) {
  validate_interaction_grid(x);
  LatentGrid z(x.data.spec(), kLatentChannels);
  for (int c = 0; c < kLatentChannels; ++c) std::ranges::copy(x.data.channel(c), z.channel(c).begin());
  return z;
}

AssembledInteraction assemble_interaction(const Codec& codec, const SdfGrid& object, const RigidTransform& t,
                                          const HandSkeleton& skeleton, const HandPose& pose) {
  AssembledInteraction a;
  a.object_in_hand = resample_under_transform(object, t);
  a.kinematics = pose_hand(skeleton, pose);
  a.grid = assemble_interaction_grid(codec.encode(a.object_in_hand), skeleton, pose);
  return a;
}

InteractionGradient interaction_vjp(const Codec& codec, const SdfGrid& object, const RigidTransform& t,
                                    const HandSkeleton&, const AssembledInteraction& forward,
                                    const VoxelGrid& upstream, SdfGrid* object_gradient) {
  const VoxelGrid& x = forward.grid.data;
  require(upstream.spec() == x.spec() && upstream.channels() == kInteractionChannels, ErrorCode::ShapeMismatch,
          "interaction_vjp: upstream shape differs from the interaction grid");
  InteractionGradient g;

  // Hand channels: band rescale, skeletal field, kinematics.
  VoxelGrid hand_up(x.spec(), kJoints);
  for (int c = 0; c < kJoints; ++c)
    std::ranges::transform(upstream.channel(kLatentChannels + c), hand_up.channel(c).begin(),
                           [](double u) { return 0.5 * u; });
  const auto& kin = forward.kinematics;
  const auto joint_grad = skeletal_field_vjp(kin.joints, x.spec(), hand_up);
  for (int f = 0; f < kFingers; ++f)
    for (int s = 1; s < kJointsPerFinger; ++s) {
      const int j = kJointsPerFinger * f + s;
      g.theta += kin.point_jacobian(kin.joints[j], kBonesPerFinger * f + s).transpose() * joint_grad[j];
    }

  // Object channels: encoder adjoint, then the resampling adjoint.
  LatentGrid latent_up(x.spec(), kLatentChannels);
  for (int c = 0; c < kLatentChannels; ++c) std::ranges::copy(upstream.channel(c), latent_up.channel(c).begin());
  const SdfGrid dense_up = codec.encode_vjp(forward.object_in_hand, latent_up);
  const ResampleVjp rv = resample_vjp(object, t, dense_up.channel(0), object_gradient);
  g.transform = rv.params;
  g.rotation_tangent = rv.tangent_rotation;
  return g;
}

}  // namespace hop
