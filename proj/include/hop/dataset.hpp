#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hop/diffusion.hpp"
#include "hop/hand_model.hpp"
#include "hop/interaction.hpp"
#include "hop/latent_codec.hpp"
#include "hop/recon.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

/// How the procedural hand closes on the object.
struct GraspRecipe {
  Vec3 approach = -Vec3::UnitZ();  ///< object-frame direction that ends up facing the palm
  double wrap = 1.0;               ///< [0, 1]: distal curl relative to proximal curl
  double spread = 0.1;             ///< [0, 0.5] rad: finger abduction fan
};

struct SyntheticGraspSpec {
  std::string label;
  ShapeDescriptor shape;  ///< object frame, centered near the origin
  GraspRecipe recipe;
  std::uint64_t seed = 0;
};

/// Built-in shape families.
inline const std::vector<std::string> kShapeFamilies = {"sphere-like", "cylinder-like", "handle-like"};

/// A random member of a family, deterministic per seed.
SyntheticGraspSpec make_family_spec(const std::string& family, std::uint64_t seed);
/// `count` specs cycling through the families.
std::vector<SyntheticGraspSpec> default_specs(int count, std::uint64_t seed);

struct GraspSample {
  SdfGrid object_in_hand;  ///< 64^3 hand-frame SDF
  HandPose pose;
  RigidTransform transform;  ///< object -> hand
  InteractionGrid grid;
  int attempts = 0;
};

struct GenerationOptions {
  GridSpec spec{};
  int max_retries = 20;
  double max_penetration = 0.003;  // m
  double contact_threshold = 0.0025;
};

/// Places the hand under the object and curls every finger into contact.
/// Throws GenerationFailed when no attempt satisfies contact and penetration.
GraspSample generate_grasp_sample(const SyntheticGraspSpec& spec, const HandSkeleton& skeleton, const Codec& codec,
                                  const GenerationOptions& options = {});

/// Largest distance between two fingertips of the open hand.
double hand_span(const HandSkeleton& skeleton);

/// Ground-truth clip scene for a generated grasp: the object on `spec` in its
/// own frame, the grasp held for every frame with a slight finger tremor.
SceneParams make_grasp_scene(const SyntheticGraspSpec& grasp_spec, const GraspSample& sample, int frames,
                             const GridSpec& spec = {});

struct ManifestEntry {
  std::string grid_file;    ///< interaction grid
  std::string object_file;  ///< hand-frame object SDF
  std::string label;
  std::uint64_t seed = 0;
  HandPose pose;
  RigidTransform transform;
  ShapeDescriptor shape;
};

struct DatasetManifest {
  int version = 1;
  std::vector<std::string> labels;
  std::vector<ManifestEntry> entries;
};

DatasetManifest build_dataset(const std::vector<SyntheticGraspSpec>& specs, const std::filesystem::path& out_dir,
                              const HandSkeleton& skeleton, const Codec& codec, const GenerationOptions& options = {});

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Problems found in a manifest (missing/corrupt files, unknown labels); empty if valid.
std::vector<std::string> validate_manifest(const std::filesystem::path& path);

/// Interaction grids of a dataset with label indices into `manifest.labels`.
std::vector<LabeledGrid> load_dataset_grids(const std::filesystem::path& manifest_path);

}  // namespace hop
