// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Geometry>

#include "egopose/rng.hpp"
#include "egopose/skeleton.hpp"

namespace egopose::synth {

constexpr std::array<std::string_view, 8> kActions = {
    "walking", "sitting", "crawling", "crouching", "boxing", "dancing", "stretching", "waving"};

/// Canonical body, bone order as in BoneTopology::standard().
constexpr BoneLengths kCanonicalBoneLengths = {175.0, 175.0, 290.0, 290.0, 260.0, 260.0, 530.0,
                                               530.0, 440.0, 440.0, 420.0, 420.0, 150.0, 150.0};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

/// Joint-angle ranges in degrees, relative to the torso. Flexion swings a
/// limb forward, abduction swings it outward, elbow/knee bend the distal bone.
struct ActionProfile {
  Range leg_flex, knee, leg_abduct;
  Range arm_flex, elbow, arm_abduct;
  bool alternating_gait = false;  // left/right swing in opposite phase
  bool single_arm_raised = false;
};

inline ActionProfile action_profile(std::string_view action) {
  if (action == "walking") return {{-25, 30}, {0, 45}, {0, 8}, {-30, 30}, {0, 40}, {5, 15}, true, false};
  if (action == "sitting") return {{70, 100}, {70, 110}, {0, 20}, {0, 60}, {20, 90}, {5, 25}, false, false};
  if (action == "crawling") return {{60, 100}, {70, 110}, {0, 15}, {60, 100}, {0, 30}, {0, 20}, false, false};
  if (action == "crouching") return {{90, 130}, {100, 140}, {5, 30}, {20, 80}, {20, 100}, {5, 30}, false, false};
  if (action == "boxing") return {{-15, 25}, {5, 35}, {0, 15}, {50, 100}, {60, 130}, {10, 40}, false, false};
  if (action == "dancing") return {{-30, 60}, {0, 70}, {0, 35}, {-40, 160}, {0, 120}, {0, 120}, false, false};
  if (action == "stretching") return {{-10, 10}, {0, 10}, {0, 15}, {120, 180}, {0, 30}, {0, 60}, false, false};
  if (action == "waving") return {{-10, 15}, {0, 20}, {0, 10}, {-10, 20}, {0, 30}, {5, 20}, false, true};
  fail(ErrorCode::kConfig, "unknown action '" + std::string(action) + "'");
}

/// Rigid placement of the camera relative to the head. Rotation columns are
/// the camera axes expressed in the head frame.
struct CameraMount {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();
};

struct SamplerConfig {
  BoneLengths bone_lengths = kCanonicalBoneLengths;
  std::vector<std::string> actions{kActions.begin(), kActions.end()};
  /// Nominal camera position relative to the neck in the head frame
  /// (x: subject's right, y: down, z: forward), millimeters.
  Vec3 mount_position{0.0, -100.0, 150.0};
  double perturb_translation_mm = 20.0;
  double perturb_rotation_deg = 5.0;
  /// Head-on-torso rotation half ranges (pitch, yaw, roll), degrees.
  Vec3 neck_rotation_deg{15.0, 25.0, 10.0};
};

struct PoseSample {
  std::string action;
  Pose3D pose;  // camera frame, millimeters
  CameraMount mount;
};

namespace detail {

inline Mat3 rot_x(double deg) { return Eigen::AngleAxisd(deg_to_rad(deg), Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double deg) { return Eigen::AngleAxisd(deg_to_rad(deg), Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double deg) { return Eigen::AngleAxisd(deg_to_rad(deg), Vec3::UnitZ()).toRotationMatrix(); }

inline const Vec3 kDown{0.0, 1.0, 0.0};

struct LimbAngles {
  double flex, bend, abduct;
};

}  // namespace detail

/// Camera looking straight down the body; image-down points forward, so
/// the torso sits at the top of the frame and the feet near the center.
inline Mat3 nominal_mount_rotation() {
  Mat3 r;
  const Vec3 z(0.0, 1.0, 0.0);
  const Vec3 y(0.0, 0.0, 1.0);
  r.col(0) = y.cross(z);
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

/// Head-frame joint positions (neck at the origin) for one action draw.
/// Bones are built from unit directions times the configured lengths, so
/// every sample has exactly the configured bone lengths.
inline Pose3D sample_body(Rng& rng, const SamplerConfig& cfg, std::string_view action) {
  using detail::LimbAngles;
  const auto profile = action_profile(action);
  const auto& len = cfg.bone_lengths;
  Pose3D body;
  body[JointId::kNeck] = Vec3::Zero();

  const double gait = profile.leg_flex.draw(rng);
  const double arm_gait = profile.arm_flex.draw(rng);
  const int raised = static_cast<int>(rng.index(2));
  for (int s = 0; s < 2; ++s) {
    const double side = s == 0 ? -1.0 : 1.0;  // left, right
    LimbAngles leg{profile.leg_flex.draw(rng), profile.knee.draw(rng), profile.leg_abduct.draw(rng)};
    LimbAngles arm{profile.arm_flex.draw(rng), profile.elbow.draw(rng), profile.arm_abduct.draw(rng)};
    if (profile.alternating_gait) {
      const double mid = 0.5 * (profile.leg_flex.lo + profile.leg_flex.hi);
      leg.flex = (s == 0 ? gait : 2 * mid - gait) + rng.symmetric(5.0);
      const double arm_mid = 0.5 * (profile.arm_flex.lo + profile.arm_flex.hi);
      arm.flex = (s == 0 ? 2 * arm_mid - arm_gait : arm_gait) + rng.symmetric(5.0);
    }
    if (profile.single_arm_raised && s == raised) {
      arm = {rng.uniform(60, 150), rng.uniform(60, 120), rng.uniform(30, 90)};
    }
    const auto sl = static_cast<std::size_t>(s);

    const Mat3 leg_out = detail::rot_z(-side * leg.abduct);
    const Vec3 hip_dir = Vec3(side * 0.19, 1.0, 0.0).normalized();
    const Vec3 hip = len[6 + sl] * hip_dir;
    const Vec3 knee = hip + len[8 + sl] * (detail::rot_x(leg.flex) * leg_out * detail::kDown);
    const Vec3 ankle = knee + len[10 + sl] * (detail::rot_x(leg.flex - leg.bend) * leg_out * detail::kDown);
    const double foot_angle = leg.flex - leg.bend + 90.0 + rng.symmetric(15.0);
    const Vec3 toe = ankle + len[12 + sl] * (detail::rot_x(foot_angle) * leg_out * detail::kDown);

    const Mat3 arm_out = detail::rot_z(-side * arm.abduct);
    const Vec3 shoulder = len[sl] * Vec3(side, 0.12, 0.0).normalized();
    const Vec3 elbow = shoulder + len[2 + sl] * (detail::rot_x(arm.flex) * arm_out * detail::kDown);
    const Vec3 wrist =
        elbow + len[4 + sl] * (detail::rot_x(arm.flex + arm.bend) * arm_out * detail::kDown);

    const int off = s == 0 ? 0 : 1;
    body[index_of(JointId::kLeftShoulder) + off] = shoulder;
    body[index_of(JointId::kLeftElbow) + off] = elbow;
    body[index_of(JointId::kLeftWrist) + off] = wrist;
    body[index_of(JointId::kLeftHip) + off] = hip;
    body[index_of(JointId::kLeftKnee) + off] = knee;
    body[index_of(JointId::kLeftAnkle) + off] = ankle;
    body[index_of(JointId::kLeftToe) + off] = toe;
  }
  return body;
}

inline CameraMount sample_mount(Rng& rng, const SamplerConfig& cfg) {
  const double r = cfg.perturb_rotation_deg;
  const double t = cfg.perturb_translation_mm;
  const Mat3 perturb = detail::rot_x(rng.symmetric(r)) * detail::rot_y(rng.symmetric(r)) *
                       detail::rot_z(rng.symmetric(r));
  const Vec3 shift(rng.symmetric(t), rng.symmetric(t), rng.symmetric(t));
  return {nominal_mount_rotation() * perturb, cfg.mount_position + shift};
}

/// Expresses head-frame points in the camera frame of `mount`.
inline Pose3D to_camera_frame(const Pose3D& head_frame, const CameraMount& mount) {
  Pose3D out;
  for (int j = 0; j < kNumJoints; ++j) {
    out[j] = mount.rotation.transpose() * (head_frame[j] - mount.position);
  }
  return out;
}

/// A random action, body configuration, head-on-torso rotation and mount
/// perturbation, returned in the camera frame.
inline PoseSample sample_pose(Rng& rng, const SamplerConfig& cfg) {
  if (cfg.actions.empty()) fail(ErrorCode::kConfig, "no actions configured");
  PoseSample out;
  out.action = cfg.actions[rng.index(cfg.actions.size())];
  Pose3D body = sample_body(rng, cfg, out.action);
  const Vec3& nr = cfg.neck_rotation_deg;
  // The head turns about the neck; equivalently the body turns the other
  // way in the head frame.
  const Mat3 head = detail::rot_x(rng.symmetric(nr.x())) * detail::rot_y(rng.symmetric(nr.y())) *
                    detail::rot_z(rng.symmetric(nr.z()));
  for (auto& p : body.joints) p = head.transpose() * p;
  out.mount = sample_mount(rng, cfg);
  out.pose = to_camera_frame(body, out.mount);
  return out;
}

}  // namespace egopose::synth
