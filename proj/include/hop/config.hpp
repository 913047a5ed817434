#pragma once

// JSON documents for configs, manifests and parameter files.

#include <filesystem>

#include <json.hpp>

#include "hop/dataset.hpp"
#include "hop/diffusion.hpp"
#include "hop/grasp.hpp"
#include "hop/hand_model.hpp"
#include "hop/recon.hpp"
#include "hop/sdf_geometry.hpp"

namespace hop {

using Json = nlohmann::ordered_json;

Json to_json(const Vec3& v);
Vec3 vec3_from_json(const Json& j);

Json to_json(const RigidTransform& t);
RigidTransform transform_from_json(const Json& j);

Json to_json(const HandPose& p);
HandPose pose_from_json(const Json& j);

Json to_json(const ShapeDescriptor& s);
ShapeDescriptor shape_from_json(const Json& j);

Json to_json(const HandSkeleton& s);
HandSkeleton skeleton_from_json(const Json& j);

Json to_json(const GraspParams& g);
GraspParams grasp_from_json(const Json& j);

Json to_json(const GraspMetrics& m);

Json to_json(const GraspConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
GraspConfig grasp_config_from_json(const Json& j);

Json to_json(const ReconConfig& c);
ReconConfig recon_config_from_json(const Json& j);

Json to_json(const OrthoCamera& c);
OrthoCamera camera_from_json(const Json& j);

Json to_json(const SyntheticGraspSpec& s);
SyntheticGraspSpec grasp_spec_from_json(const Json& j);

/// Reads a JSON document; IoFailure / InvalidConfig on error.
Json read_json(const std::filesystem::path& path);
/// Writes with two-space indent and a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

/// Clip on disk: manifest.json + per-frame PGM masks.
void write_clip(const std::filesystem::path& dir, const ClipObservation& clip);
ClipObservation read_clip(const std::filesystem::path& manifest);

/// Scene on disk: scene.json + object HOPG.
void write_scene(const std::filesystem::path& dir, const std::string& stem, const SceneParams& scene);
SceneParams read_scene(const std::filesystem::path& json_path);

}  // namespace hop
