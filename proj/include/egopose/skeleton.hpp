// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "egopose/fisheye_camera.hpp"

namespace egopose {

/// Serialized arrays follow this order.
enum class JointId : int {
  kNeck = 0,
  kLeftShoulder,
  kRightShoulder,
  kLeftElbow,
  kRightElbow,
  kLeftWrist,
  kRightWrist,
  kLeftHip,
  kRightHip,
  kLeftKnee,
  kRightKnee,
  kLeftAnkle,
  kRightAnkle,
  kLeftToe,
  kRightToe,
};

constexpr int kNumJoints = 15;
constexpr int kNumBones = 14;
/// Lower-body joints (hips, knees, ankles, toes) are contiguous, starting here.
constexpr int kFirstLowerBodyJoint = static_cast<int>(JointId::kLeftHip);
constexpr int kNumLowerBodyJoints = 8;

constexpr int index_of(JointId j) { return static_cast<int>(j); }
constexpr bool is_lower_body(int joint) { return joint >= kFirstLowerBodyJoint; }

constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "neck",       "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",   "left_hip",       "right_hip",  "left_knee",
    "right_knee", "left_ankle",    "right_ankle",    "left_toe",   "right_toe"};

struct Bone {
  JointId parent;
  JointId child;
};

/// Tree rooted at the neck. Parents always precede their children, so a
/// single forward pass visits the tree top-down.
struct BoneTopology {
  std::array<Bone, kNumBones> bones;

  static constexpr BoneTopology standard() {
    using J = JointId;
    return {{{{J::kNeck, J::kLeftShoulder},
              {J::kNeck, J::kRightShoulder},
              {J::kLeftShoulder, J::kLeftElbow},
              {J::kRightShoulder, J::kRightElbow},
              {J::kLeftElbow, J::kLeftWrist},
              {J::kRightElbow, J::kRightWrist},
              {J::kNeck, J::kLeftHip},
              {J::kNeck, J::kRightHip},
              {J::kLeftHip, J::kLeftKnee},
              {J::kRightHip, J::kRightKnee},
              {J::kLeftKnee, J::kLeftAnkle},
              {J::kRightKnee, J::kRightAnkle},
              {J::kLeftAnkle, J::kLeftToe},
              {J::kRightAnkle, J::kRightToe}}}};
  }

  std::string bone_name(std::size_t i) const {
    return std::string(kJointNames[static_cast<std::size_t>(index_of(bones[i].parent))]) + "-" +
           std::string(kJointNames[static_cast<std::size_t>(index_of(bones[i].child))]);
  }

  /// True when the bones form a spanning tree over all joints rooted at the neck.
  bool is_spanning_tree() const {
    std::array<bool, kNumJoints> reached{};
    reached[0] = true;
    for (const auto& b : bones) {
      const int p = index_of(b.parent);
      const int c = index_of(b.child);
      if (!reached[static_cast<std::size_t>(p)] || reached[static_cast<std::size_t>(c)]) {
        return false;
      }
      reached[static_cast<std::size_t>(c)] = true;
    }
    for (bool r : reached) {
      if (!r) return false;
    }
    return true;
  }
};

using BoneLengths = std::array<double, kNumBones>;

/// Camera-space joint positions in millimeters.
struct Pose3D {
  std::array<Vec3, kNumJoints> joints;

  Vec3& operator[](int j) { return joints[static_cast<std::size_t>(j)]; }
  const Vec3& operator[](int j) const { return joints[static_cast<std::size_t>(j)]; }
  Vec3& operator[](JointId j) { return (*this)[index_of(j)]; }
  const Vec3& operator[](JointId j) const { return (*this)[index_of(j)]; }
};

/// Image-space joints in pixels. Joints outside the field of view carry
/// confidence 0 and `in_fov` false; their pixel is meaningless.
struct Pose2D {
  std::array<Vec2, kNumJoints> pixels;
  std::array<double, kNumJoints> confidence{};
  std::array<bool, kNumJoints> in_fov{};
};

inline BoneLengths bone_lengths(const Pose3D& pose,
                                const BoneTopology& topo = BoneTopology::standard()) {
  BoneLengths out{};
  for (std::size_t i = 0; i < kNumBones; ++i) {
    out[i] = (pose[topo.bones[i].child] - pose[topo.bones[i].parent]).norm();
  }
  return out;
}

/// Repositions every child along its current parent->child direction at the
/// target length, walking down from the neck (which stays put).
///
/// Joints masked out by `valid` (undetected) are carried rigidly with their
/// parent and bones touching them keep their current geometry.
inline Pose3D rescale_to_universal(const Pose3D& pose, const BoneLengths& universal,
                                   const BoneTopology& topo = BoneTopology::standard(),
                                   const std::array<bool, kNumJoints>* valid = nullptr) {
  auto ok = [&](JointId j) { return valid == nullptr || (*valid)[static_cast<std::size_t>(index_of(j))]; };
  Pose3D out = pose;
  std::array<Vec3, kNumJoints> shift;
  shift.fill(Vec3::Zero());
  for (std::size_t i = 0; i < kNumBones; ++i) {
    const auto [parent, child] = topo.bones[i];
    if (!ok(parent) || !ok(child)) {
      shift[static_cast<std::size_t>(index_of(child))] = shift[static_cast<std::size_t>(index_of(parent))];
      out[child] = pose[child] + shift[static_cast<std::size_t>(index_of(parent))];
      continue;
    }
    const Vec3 offset = pose[child] - pose[parent];
    const double len = offset.norm();
    if (!(len > 0.0)) {
      fail(ErrorCode::kDegeneratePose, "zero-length bone " + topo.bone_name(i));
    }
    out[child] = out[parent] + offset * (universal[i] / len);
    shift[static_cast<std::size_t>(index_of(child))] = out[child] - pose[child];
  }
  return out;
}

inline Json bone_lengths_to_json(const BoneLengths& lengths,
                                 const BoneTopology& topo = BoneTopology::standard()) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < kNumBones; ++i) {
    arr.push_back({{"bone", topo.bone_name(i)}, {"length_mm", lengths[i]}});
  }
  return arr;
}

inline BoneLengths bone_lengths_from_json(const Json& j,
                                          const BoneTopology& topo = BoneTopology::standard()) {
  if (!j.is_array() || j.size() != kNumBones) {
    fail(ErrorCode::kConfig, "universal skeleton: expected a list of 14 bones");
  }
  BoneLengths out{};
  for (std::size_t i = 0; i < kNumBones; ++i) {
    check_keys(j[i], {"bone", "length_mm"}, "universal skeleton");
    const auto name = require<std::string>(j[i], "bone", "universal skeleton");
    if (name != topo.bone_name(i)) {
      fail(ErrorCode::kConfig, "universal skeleton: expected bone '" + topo.bone_name(i) +
                                   "' at position " + std::to_string(i) + ", got '" + name + "'");
    }
    out[i] = require<double>(j[i], "length_mm", "universal skeleton");
    if (!(out[i] > 0.0)) fail(ErrorCode::kConfig, "universal skeleton: lengths must be positive");
  }
  return out;
}

/// Pose file: joints3d_mm (15x3), joints2d_px (15x2, null when out of view),
/// confidence (15), plus a per-joint status string.
inline Json pose_to_json(const Pose3D& pose3d, const Pose2D& pose2d,
                         const std::array<std::string, kNumJoints>* status = nullptr) {
  Json j3 = Json::array();
  Json j2 = Json::array();
  Json conf = Json::array();
  for (int j = 0; j < kNumJoints; ++j) {
    j3.push_back({pose3d[j].x(), pose3d[j].y(), pose3d[j].z()});
    const auto sj = static_cast<std::size_t>(j);
    if (pose2d.in_fov[sj]) {
      j2.push_back({pose2d.pixels[sj].x(), pose2d.pixels[sj].y()});
    } else {
      j2.push_back(nullptr);
    }
    conf.push_back(pose2d.confidence[sj]);
  }
  Json out{{"joints3d_mm", j3}, {"joints2d_px", j2}, {"confidence", conf}};
  if (status != nullptr) out["status"] = *status;
  return out;
}

struct PoseFile {
  Pose3D pose3d;
  Pose2D pose2d;
  std::optional<std::array<std::string, kNumJoints>> status;
};

namespace detail {
inline PoseFile parse_pose_arrays(const Json& j) {
  const auto& j3 = j.at("joints3d_mm");
  const auto& j2 = j.at("joints2d_px");
  const auto& conf = j.at("confidence");
  if (j3.size() != kNumJoints || j2.size() != kNumJoints || conf.size() != kNumJoints) {
    fail(ErrorCode::kConfig, "pose file: expected 15 joints in every array");
  }
  PoseFile out;
  for (int k = 0; k < kNumJoints; ++k) {
    const auto sk = static_cast<std::size_t>(k);
    out.pose3d[k] = Vec3(j3[sk][0].get<double>(), j3[sk][1].get<double>(), j3[sk][2].get<double>());
    if (j2[sk].is_null()) {
      out.pose2d.in_fov[sk] = false;
      out.pose2d.pixels[sk] = Vec2::Zero();
    } else {
      out.pose2d.in_fov[sk] = true;
      out.pose2d.pixels[sk] = Vec2(j2[sk][0].get<double>(), j2[sk][1].get<double>());
    }
    out.pose2d.confidence[sk] = conf[sk].get<double>();
  }
  if (j.contains("status")) out.status = j.at("status").get<std::array<std::string, kNumJoints>>();
  return out;
}
}  // namespace detail

inline PoseFile pose_from_json(const Json& j) {
  constexpr std::string_view ctx = "pose file";
  check_keys(j, {"joints3d_mm", "joints2d_px", "confidence", "status", "distances_mm"}, ctx);
  for (const char* key : {"joints3d_mm", "joints2d_px", "confidence"}) {
    if (!j.contains(key)) fail(ErrorCode::kConfig, std::string("pose file: missing field '") + key + "'");
  }
  try {
    return detail::parse_pose_arrays(j);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("pose file: ") + e.what());
  }
}

}  // namespace egopose
