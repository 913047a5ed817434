#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hop {

enum class ErrorCode {
  InvalidArgument,
  InvalidShape,
  EmptyMesh,
  BadResolution,
  ShapeMismatch,
  UnknownCondition,
  EmptyDataset,
  NonFiniteObjective,
  DivergedOptimization,
  FrameOutOfRange,
  EmptySurface,
  GenerationFailed,
  IoFailure,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. `code()` is stable and is what the CLI reports.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const char* message) {
  if (!condition) fail(code, message);
}

}  // namespace hop
