#include "hop/error.hpp"

namespace hop {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::EmptyMesh: return "EmptyMesh";
    case ErrorCode::BadResolution: return "BadResolution";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownCondition: return "UnknownCondition";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorCode::DivergedOptimization: return "DivergedOptimization";
    case ErrorCode::FrameOutOfRange: return "FrameOutOfRange";
    case ErrorCode::EmptySurface: return "EmptySurface";
    case ErrorCode::GenerationFailed: return "GenerationFailed";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace hop
