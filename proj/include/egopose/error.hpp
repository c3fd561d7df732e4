// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace egopose {

enum class ErrorCode {
  kDomain,
  kOutOfFov,
  kCalibrationInvalid,
  kFit,
  kDegeneratePose,
  kUndetectedJoint,
  kShape,
  kUsage,
  kConfig,
  kIo,
  kAlignment,
  kTrainingDiverged,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kOutOfFov: return "out_of_fov";
    case ErrorCode::kCalibrationInvalid: return "calibration_invalid";
    case ErrorCode::kFit: return "fit";
    case ErrorCode::kDegeneratePose: return "degenerate_pose";
    case ErrorCode::kUndetectedJoint: return "undetected_joint";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kAlignment: return "alignment";
    case ErrorCode::kTrainingDiverged: return "training_diverged";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace egopose
