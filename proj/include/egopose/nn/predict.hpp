// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <memory>
#include <string>

#include "egopose/eval.hpp"
#include "egopose/lift.hpp"
#include "egopose/nn/train.hpp"

namespace egopose::nn {

/// Evaluation variants: the full pipeline and its ablations.
enum class Variant { kFull, kNoZoom, kNoAveraging, kBaselineVector, kOracle };

inline constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariantNames = {{
    {Variant::kFull, "full"},
    {Variant::kNoZoom, "no-zoom"},
    {Variant::kNoAveraging, "no-averaging"},
    {Variant::kBaselineVector, "baseline-vector"},
    {Variant::kOracle, "oracle"},
}};

inline std::string variant_name(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return std::string(name);
  }
  return "unknown";
}

inline Variant variant_from_name(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames) {
    if (n == name) return variant;
  }
  fail(ErrorCode::kUsage,
       "unknown variant '" + std::string(name) + "' (full, no-zoom, no-averaging, baseline-vector, oracle)");
}

struct Model {
  NetConfig config;
  NetParams params;
};

/// Everything the network produces for one image.
struct Inference {
  HeatmapStack full;
  HeatmapStack zoom;
  HeatmapStack fused;
  std::array<double, kNumJoints> distances_mm{};
  LiftResult lifted;
};

inline Inference infer(const Model& m, const Image& image, const FisheyeCamera& camera,
                       Variant variant = Variant::kFull) {
  if (!(camera.image_size() == ImageSize{image.width, image.height})) {
    fail(ErrorCode::kShape, "calibration image size differs from the input image");
  }
  Inference out;
  const Forward2D full = forward_2d(m.params, m.config, image, Branch::kFull);
  out.full = full.heatmaps;
  if (variant == Variant::kNoZoom) {
    out.fused = out.full;
    out.distances_mm = forward_distance_no_zoom(m.params, m.config, full.features);
  } else {
    const Forward2D zoom = forward_2d(m.params, m.config, image, Branch::kZoom);
    out.zoom = zoom.heatmaps;
    out.fused = fuse_lower_body(out.full, out.zoom, variant == Variant::kNoAveraging ? 1.0 : 0.5);
    out.distances_mm = forward_distance(m.params, m.config, full.features, zoom.features);
  }
  out.lifted = lift(out.fused, out.distances_mm, camera);
  return out;
}

/// Direct-regression prediction; every joint counts as detected.
inline Prediction baseline_prediction(const Model& m, const Image& image) {
  const auto v = forward_baseline_vector(m.params, m.config, image);
  Prediction p;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto b = static_cast<std::size_t>(3 * j);
    p.pose[j] = Vec3(v[b], v[b + 1], v[b + 2]);
  }
  p.ok.fill(true);
  return p;
}

/// Predictor for the evaluation harness. The oracle ignores the model.
inline Predictor make_predictor(Variant variant, std::shared_ptr<const Model> model) {
  if (variant == Variant::kOracle) return oracle_predictor(HeatmapVariant::kFused);
  if (!model) fail(ErrorCode::kUsage, "variant '" + variant_name(variant) + "' needs a checkpoint");
  if (variant == Variant::kBaselineVector) {
    return [model](const synth::CorpusFrame& f) { return baseline_prediction(*model, f.image); };
  }
  return [model, variant](const synth::CorpusFrame& f) {
    return prediction_from_lift(infer(*model, f.image, f.camera, variant).lifted);
  };
}

}  // namespace egopose::nn
