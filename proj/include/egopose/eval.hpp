// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "egopose/lift.hpp"
#include "egopose/skeleton.hpp"
#include "egopose/synth/corpus.hpp"

namespace egopose {

using JointMask = std::array<bool, kNumJoints>;

inline JointMask all_joints() {
  JointMask m;
  m.fill(true);
  return m;
}

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Pose3D apply(const Pose3D& pose) const {
    Pose3D out;
    for (int j = 0; j < kNumJoints; ++j) out[j] = apply(pose[j]);
    return out;
  }
};

struct Alignment {
  SimilarityTransform transform;
  Pose3D aligned;
};

/// Least-squares similarity registration of `pred` onto `gt` over the masked
/// joints: centroids, SVD of the cross-covariance, determinant correction so
/// the rotation is proper, then the optimal scale.
inline Alignment procrustes_align(const Pose3D& pred, const Pose3D& gt, const JointMask& mask = all_joints()) {
  std::vector<int> used;
  for (int j = 0; j < kNumJoints; ++j) {
    if (mask[static_cast<std::size_t>(j)]) used.push_back(j);
  }
  if (used.size() < 3) fail(ErrorCode::kAlignment, "alignment needs at least 3 joints");
  const auto n = static_cast<Eigen::Index>(used.size());
  Eigen::Matrix3Xd x(3, n);
  Eigen::Matrix3Xd y(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    x.col(k) = pred[used[static_cast<std::size_t>(k)]];
    y.col(k) = gt[used[static_cast<std::size_t>(k)]];
  }
  const Vec3 mx = x.rowwise().mean();
  const Vec3 my = y.rowwise().mean();
  x.colwise() -= mx;
  y.colwise() -= my;

  Eigen::JacobiSVD<Eigen::Matrix3Xd> spread(x);
  const auto sv = spread.singularValues();
  if (!(sv(1) > 1e-9 * std::max(sv(0), 1e-300))) {
    fail(ErrorCode::kAlignment, "degenerate (collinear or coincident) joint configuration");
  }

  const Mat3 cov = y * x.transpose() / static_cast<double>(n);
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  SimilarityTransform t;
  t.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  const double var_x = x.squaredNorm() / static_cast<double>(n);
  t.scale = (svd.singularValues().asDiagonal() * s).trace() / var_x;
  t.translation = my - t.scale * t.rotation * mx;
  return {t, t.apply(pred)};
}

struct JointErrors {
  std::array<double, kNumJoints> per_joint{};
  double mean = 0.0;
  int count = 0;
};

/// Euclidean error per joint; the mean runs over masked joints only.
inline JointErrors mpjpe(const Pose3D& aligned, const Pose3D& gt, const JointMask& mask = all_joints()) {
  JointErrors out;
  double sum = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    out.per_joint[sj] = (aligned[j] - gt[j]).norm();
    if (mask[sj]) {
      sum += out.per_joint[sj];
      ++out.count;
    }
  }
  out.mean = out.count > 0 ? sum / out.count : 0.0;
  return out;
}

/// What a predictor hands the harness for one frame.
struct Prediction {
  Pose3D pose;
  JointMask ok{};
  /// Decoded 2D joints, when the predictor works through heatmaps.
  std::optional<Pose2D> detections;
};

using Predictor = std::function<Prediction(const synth::CorpusFrame&)>;

inline Prediction prediction_from_lift(const LiftResult& r) { return {r.pose, r.ok_mask(), r.detections}; }

/// Heatmap variants of the 2D module.
enum class HeatmapVariant { kFused, kFullOnly };

/// Feeds the frame's own ground-truth heatmaps and distances through the
/// lifting stage; `kFused` averages in the zoom branch as the network would.
inline Predictor oracle_predictor(HeatmapVariant variant = HeatmapVariant::kFused) {
  return [variant](const synth::CorpusFrame& f) {
    const HeatmapStack heat =
        variant == HeatmapVariant::kFused ? fuse_lower_body(f.heatmaps_full, f.heatmaps_zoom) : f.heatmaps_full;
    return prediction_from_lift(lift(heat, f.distances, f.camera));
  };
}

struct EvalReport {
  std::string variant;
  std::string skeleton_source = "corpus canonical body";
  std::array<double, kNumJoints> per_joint_mean{};
  std::array<int, kNumJoints> per_joint_count{};
  std::map<std::string, double> per_action_mean;
  std::map<std::string, int> per_action_joints;
  double overall_mean = 0.0;
  double coverage = 0.0;  // ok joints / all joints over every frame seen
  int frames_total = 0;
  int frames_evaluated = 0;
  int frames_skipped = 0;
  /// Mean pixel error of decoded lower-body joints against ground truth.
  double lower_body_2d_error_px = 0.0;
  int lower_body_2d_count = 0;
};

/// Per frame: predict, rescale bones to the universal skeleton, align with
/// Procrustes, measure. The rescale-then-align order is fixed. Frames with
/// fewer than 3 usable joints are skipped and counted.
inline EvalReport evaluate_variant(const Predictor& predictor, std::span<const synth::CorpusFrame> frames,
                                   const BoneLengths& universal, const std::string& variant) {
  EvalReport r;
  r.variant = variant;
  std::array<double, kNumJoints> joint_sum{};
  std::map<std::string, double> action_sum;
  double total_sum = 0.0;
  int total_count = 0;
  int ok_joints = 0;
  double lower_sum = 0.0;
  int predicted = 0;
  for (const auto& f : frames) {
    ++r.frames_total;
    bool gt_ok = true;
    for (const auto& p : f.joints3d.joints) gt_ok = gt_ok && p.allFinite();
    if (!gt_ok) {
      ++r.frames_skipped;
      continue;
    }
    const Prediction pred = predictor(f);
    ++predicted;
    int n_ok = 0;
    for (bool b : pred.ok) n_ok += b ? 1 : 0;
    ok_joints += n_ok;
    if (pred.detections) {
      for (int j = kFirstLowerBodyJoint; j < kNumJoints; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (!pred.ok[sj] || !f.joints2d.in_fov[sj]) continue;
        lower_sum += (pred.detections->pixels[sj] - f.joints2d.pixels[sj]).norm();
        ++r.lower_body_2d_count;
      }
    }
    if (n_ok < 3) {
      ++r.frames_skipped;
      continue;
    }
    Alignment aligned;
    try {
      const Pose3D rescaled = rescale_to_universal(pred.pose, universal, BoneTopology::standard(), &pred.ok);
      aligned = procrustes_align(rescaled, f.joints3d, pred.ok);
    } catch (const Error&) {
      ++r.frames_skipped;
      continue;
    }
    const auto err = mpjpe(aligned.aligned, f.joints3d, pred.ok);
    ++r.frames_evaluated;
    for (int j = 0; j < kNumJoints; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      if (!pred.ok[sj]) continue;
      joint_sum[sj] += err.per_joint[sj];
      ++r.per_joint_count[sj];
      action_sum[f.action] += err.per_joint[sj];
      ++r.per_action_joints[f.action];
      total_sum += err.per_joint[sj];
      ++total_count;
    }
  }
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    r.per_joint_mean[j] = r.per_joint_count[j] > 0 ? joint_sum[j] / r.per_joint_count[j] : 0.0;
  }
  for (const auto& [action, sum] : action_sum) r.per_action_mean[action] = sum / r.per_action_joints[action];
  r.overall_mean = total_count > 0 ? total_sum / total_count : 0.0;
  r.coverage = predicted > 0 ? static_cast<double>(ok_joints) / (static_cast<double>(predicted) * kNumJoints) : 0.0;
  r.lower_body_2d_error_px = r.lower_body_2d_count > 0 ? lower_sum / r.lower_body_2d_count : 0.0;
  return r;
}

inline Json report_to_json(const EvalReport& r) {
  Json joints = Json::object();
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    joints[std::string(kJointNames[j])] = {{"mean_mm", r.per_joint_mean[j]}, {"count", r.per_joint_count[j]}};
  }
  Json actions = Json::object();
  for (const auto& [a, m] : r.per_action_mean) {
    actions[a] = {{"mean_mm", m}, {"joints", r.per_action_joints.at(a)}};
  }
  return {{"variant", r.variant},
          {"universal_skeleton", r.skeleton_source},
          {"overall_mean_mm", r.overall_mean},
          {"coverage", r.coverage},
          {"frames_total", r.frames_total},
          {"frames_evaluated", r.frames_evaluated},
          {"frames_skipped", r.frames_skipped},
          {"lower_body_2d_error_px", r.lower_body_2d_error_px},
          {"per_joint", joints},
          {"per_action", actions}};
}

/// Plain-text table: one row per variant, one column per action plus total.
inline std::string render_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  char buf[64];
  std::size_t label_width = 8;
  for (const auto& r : reports) label_width = std::max(label_width, r.variant.size());
  out << std::string(label_width, ' ');
  for (auto a : synth::kActions) {
    std::snprintf(buf, sizeof(buf), " | %10s", std::string(a).c_str());
    out << buf;
  }
  out << " || " << "     total\n";
  out << std::string(label_width + synth::kActions.size() * 13 + 14, '-') << "\n";
  for (const auto& r : reports) {
    out << r.variant << std::string(label_width - r.variant.size(), ' ');
    for (auto a : synth::kActions) {
      const auto it = r.per_action_mean.find(std::string(a));
      if (it == r.per_action_mean.end()) {
        std::snprintf(buf, sizeof(buf), " | %10s", "-");
      } else {
        std::snprintf(buf, sizeof(buf), " | %10.4f", it->second);
      }
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), " || %10.4f\n", r.overall_mean);
    out << buf;
  }
  out << "mean joint error in mm after universal-skeleton rescaling and Procrustes alignment\n";
  return out.str();
}

}  // namespace egopose
