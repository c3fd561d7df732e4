// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <string>

#include "egopose/fisheye_camera.hpp"
#include "egopose/heatmap.hpp"
#include "egopose/skeleton.hpp"

namespace egopose {

enum class JointStatus { kOk, kUndetected, kOutOfFov, kInvalidDistance };

inline std::string joint_status_name(JointStatus s) {
  switch (s) {
    case JointStatus::kOk: return "ok";
    case JointStatus::kUndetected: return "undetected";
    case JointStatus::kOutOfFov: return "out_of_fov";
    case JointStatus::kInvalidDistance: return "invalid_distance";
  }
  return "unknown";
}

struct LiftResult {
  Pose3D pose;
  Pose2D detections;  // decoded heatmap peaks
  std::array<double, kNumJoints> residual_px{};
  std::array<JointStatus, kNumJoints> status{};

  bool ok(int j) const { return status[static_cast<std::size_t>(j)] == JointStatus::kOk; }
  std::array<bool, kNumJoints> ok_mask() const {
    std::array<bool, kNumJoints> m{};
    for (int j = 0; j < kNumJoints; ++j) m[static_cast<std::size_t>(j)] = ok(j);
    return m;
  }
  std::array<std::string, kNumJoints> status_names() const {
    std::array<std::string, kNumJoints> out;
    for (std::size_t j = 0; j < kNumJoints; ++j) out[j] = joint_status_name(status[j]);
    return out;
  }
};

/// Decoded peak -> ray through the lens -> point at the given distance along
/// the normalized ray. Joints that cannot be lifted keep a zero position and
/// a non-ok status.
inline LiftResult lift(const HeatmapStack& fused, std::span<const double, kNumJoints> distances_mm,
                       const FisheyeCamera& camera) {
  if (fused.branch != Branch::kFull || fused.channels != kNumJoints) {
    fail(ErrorCode::kUsage, "lift expects a full-frame 15-joint heatmap stack");
  }
  if (!(fused.source == camera.image_size())) {
    fail(ErrorCode::kShape, "heatmap source size differs from the camera image size");
  }
  LiftResult out;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    out.pose[j] = Vec3::Zero();
    out.detections.pixels[sj] = Vec2::Zero();
    DecodedPeak peak;
    try {
      peak = decode_channel(fused, j);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUndetectedJoint) throw;
      out.status[sj] = JointStatus::kUndetected;
      continue;
    }
    out.detections.pixels[sj] = peak.pixel;
    out.detections.confidence[sj] = peak.confidence;
    Vec3 ray;
    try {
      ray = camera.backproject(peak.pixel);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kOutOfFov) throw;
      out.status[sj] = JointStatus::kOutOfFov;
      continue;
    }
    out.detections.in_fov[sj] = true;
    const double d = distances_mm[sj];
    if (!(d > 0.0) || !std::isfinite(d)) {
      out.status[sj] = JointStatus::kInvalidDistance;
      continue;
    }
    out.pose[j] = d / ray.norm() * ray;
    try {
      out.residual_px[sj] = (camera.project(out.pose[j]) - peak.pixel).norm();
    } catch (const Error&) {
      out.status[sj] = JointStatus::kOutOfFov;
      continue;
    }
    out.status[sj] = JointStatus::kOk;
  }
  return out;
}

/// Projection of each joint; joints outside the field of view are flagged.
inline Pose2D reproject(const Pose3D& pose, const FisheyeCamera& camera) {
  Pose2D out;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    out.pixels[sj] = Vec2::Zero();
    if (!camera.in_fov(pose[j])) continue;
    try {
      out.pixels[sj] = camera.project(pose[j]);
    } catch (const Error&) {
      continue;
    }
    out.in_fov[sj] = true;
    out.confidence[sj] = 1.0;
  }
  return out;
}

}  // namespace egopose
