// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "egopose/image.hpp"
#include "egopose/skeleton.hpp"

namespace egopose {

enum class Branch { kFull, kZoom };

inline std::string_view branch_name(Branch b) { return b == Branch::kFull ? "full" : "zoom"; }

inline Branch branch_from_name(std::string_view name) {
  if (name == "full") return Branch::kFull;
  if (name == "zoom") return Branch::kZoom;
  fail(ErrorCode::kConfig, "unknown branch '" + std::string(name) + "'");
}

constexpr int kDefaultHeatmapGrid = 32;
constexpr int kStampKernelSize = 5;
constexpr double kStampSigma = 0.8;

/// Per-joint confidence grids. Channel c of the zoom branch is joint
/// kFirstLowerBodyJoint + c; the full branch holds all 15 joints.
/// Values are stored channel-major, row-major within a channel.
struct HeatmapStack {
  Branch branch = Branch::kFull;
  int channels = 0;
  int grid = kDefaultHeatmapGrid;
  ImageSize source{};
  std::vector<double> values;

  HeatmapStack() = default;
  HeatmapStack(Branch b, int grid_size, ImageSize source_size)
      : branch(b),
        channels(b == Branch::kFull ? kNumJoints : kNumLowerBodyJoints),
        grid(grid_size),
        source(source_size),
        values(static_cast<std::size_t>(channels * grid * grid), 0.0) {}

  std::size_t plane() const { return static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid); }
  double& at(int c, int row, int col) {
    return values[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(row * grid + col)];
  }
  double at(int c, int row, int col) const {
    return values[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(row * grid + col)];
  }
  std::span<const double> channel(int c) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(c) * plane(), plane());
  }
  std::span<double> channel(int c) {
    return std::span<double>(values).subspan(static_cast<std::size_t>(c) * plane(), plane());
  }

  /// Joint id of channel c.
  int joint_of(int c) const { return branch == Branch::kFull ? c : kFirstLowerBodyJoint + c; }
};

/// Square crop covering the central half of the image, magnified 2x.
struct ZoomGeometry {
  static constexpr double kScale = 2.0;

  static Vec2 to_zoom(const Vec2& pixel, ImageSize size) {
    return (pixel - Vec2(size.width / 4.0, size.height / 4.0)) * kScale;
  }
  static Vec2 from_zoom(const Vec2& zoom_pixel, ImageSize size) {
    return zoom_pixel / kScale + Vec2(size.width / 4.0, size.height / 4.0);
  }
};

inline bool inside_image(const Vec2& p, ImageSize size) {
  return p.x() >= 0.0 && p.x() < size.width && p.y() >= 0.0 && p.y() < size.height;
}

/// One channel: nearest cell of the 2*grid stamping raster gets a unit-peak
/// 5x5 Gaussian, then 2x2 mean pooling down to grid x grid.
inline void encode_channel(std::span<double> out, const Vec2& pixel, ImageSize size, int grid) {
  std::fill(out.begin(), out.end(), 0.0);
  if (!inside_image(pixel, size)) return;
  const int fine = 2 * grid;
  const int cx = std::min(static_cast<int>(std::floor(pixel.x() * fine / size.width)), fine - 1);
  const int cy = std::min(static_cast<int>(std::floor(pixel.y() * fine / size.height)), fine - 1);
  constexpr int half = kStampKernelSize / 2;
  const double inv = 1.0 / (2.0 * kStampSigma * kStampSigma);
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      const int fx = cx + dx;
      const int fy = cy + dy;
      if (fx < 0 || fy < 0 || fx >= fine || fy >= fine) continue;
      out[static_cast<std::size_t>((fy / 2) * grid + fx / 2)] +=
          0.25 * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
}

/// Ground-truth heatmaps for all 15 joints. Joints flagged out of view or
/// outside the image give all-zero channels.
inline HeatmapStack encode_heatmaps(const Pose2D& joints, ImageSize size,
                                    int grid = kDefaultHeatmapGrid) {
  HeatmapStack out(Branch::kFull, grid, size);
  for (int j = 0; j < kNumJoints; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    if (!joints.in_fov[sj]) continue;
    encode_channel(out.channel(j), joints.pixels[sj], size, grid);
  }
  return out;
}

/// Ground truth for the zoom branch: lower-body joints mapped into the
/// magnified central crop.
inline HeatmapStack encode_zoom_heatmaps(const Pose2D& joints, ImageSize size,
                                         int grid = kDefaultHeatmapGrid) {
  HeatmapStack out(Branch::kZoom, grid, size);
  for (int c = 0; c < kNumLowerBodyJoints; ++c) {
    const auto sj = static_cast<std::size_t>(kFirstLowerBodyJoint + c);
    if (!joints.in_fov[sj]) continue;
    encode_channel(out.channel(c), ZoomGeometry::to_zoom(joints.pixels[sj], size), size, grid);
  }
  return out;
}

struct DecodedPeak {
  Vec2 pixel;
  double confidence = 0.0;
};

/// Argmax cell refined by the center of mass of its 3x3 neighbourhood,
/// returned in source-image pixels. Negative responses carry no weight.
inline DecodedPeak decode_peak(std::span<const double> channel, int grid, ImageSize source) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < channel.size(); ++i) {
    if (channel[i] > channel[best]) best = i;
  }
  const double peak = channel[best];
  if (!(peak > 0.0)) fail(ErrorCode::kUndetectedJoint, "heatmap has no positive response");
  const int row = static_cast<int>(best) / grid;
  const int col = static_cast<int>(best) % grid;
  double mass = 0.0;
  double sx = 0.0;
  double sy = 0.0;
  for (int r = std::max(row - 1, 0); r <= std::min(row + 1, grid - 1); ++r) {
    for (int c = std::max(col - 1, 0); c <= std::min(col + 1, grid - 1); ++c) {
      const double w = std::max(channel[static_cast<std::size_t>(r * grid + c)], 0.0);
      mass += w;
      sx += w * (c + 0.5);
      sy += w * (r + 0.5);
    }
  }
  return {Vec2(sx / mass * source.width / grid, sy / mass * source.height / grid), peak};
}

/// Decoded peak of channel c in full-frame pixels (zoom channels are mapped
/// back out of the crop).
inline DecodedPeak decode_channel(const HeatmapStack& stack, int c) {
  auto peak = decode_peak(stack.channel(c), stack.grid, stack.source);
  if (stack.branch == Branch::kZoom) peak.pixel = ZoomGeometry::from_zoom(peak.pixel, stack.source);
  return peak;
}

/// Central half of a square image, bilinearly magnified back to full size.
inline Image zoom_crop(const Image& img) {
  if (img.width != img.height) fail(ErrorCode::kShape, "zoom crop needs a square image");
  Image out(img.width, img.height, img.channels);
  const ImageSize size{img.width, img.height};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Vec2 src = ZoomGeometry::from_zoom(Vec2(x + 0.5, y + 0.5), size);
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.sample(src.x(), src.y(), c);
    }
  }
  return out;
}

/// Averages the lower-body channels of both branches inside the zoom
/// coverage (the central grid/2 square of the full-frame grid). The zoom
/// heatmaps are bilinearly resampled into full-frame cells first; everything
/// outside the coverage and all upper-body channels pass through.
/// `zoom_weight` 1 replaces the full-branch values instead of averaging.
inline HeatmapStack fuse_lower_body(const HeatmapStack& full, const HeatmapStack& zoom, double zoom_weight = 0.5) {
  if (full.branch != Branch::kFull || zoom.branch != Branch::kZoom) {
    fail(ErrorCode::kUsage, "fuse_lower_body expects (full, zoom) stacks");
  }
  if (full.grid != zoom.grid || !(full.source == zoom.source)) {
    fail(ErrorCode::kShape, "branch stacks disagree on grid or source size");
  }
  if (full.grid % 4 != 0) fail(ErrorCode::kShape, "grid must be divisible by 4 for fusion");
  const int g = full.grid;
  HeatmapStack out = full;
  auto zoom_at = [&](int c, int r, int col) {
    return zoom.at(c, std::clamp(r, 0, g - 1), std::clamp(col, 0, g - 1));
  };
  for (int c = 0; c < kNumLowerBodyJoints; ++c) {
    const int joint = kFirstLowerBodyJoint + c;
    for (int r = g / 4; r < 3 * g / 4; ++r) {
      for (int col = g / 4; col < 3 * g / 4; ++col) {
        // Full cell center in zoom-grid cell units.
        const double zx = ((col + 0.5) / g - 0.25) * ZoomGeometry::kScale * g - 0.5;
        const double zy = ((r + 0.5) / g - 0.25) * ZoomGeometry::kScale * g - 0.5;
        const int x0 = static_cast<int>(std::floor(zx));
        const int y0 = static_cast<int>(std::floor(zy));
        const double tx = zx - x0;
        const double ty = zy - y0;
        const double resampled =
            (zoom_at(c, y0, x0) * (1 - tx) + zoom_at(c, y0, x0 + 1) * tx) * (1 - ty) +
            (zoom_at(c, y0 + 1, x0) * (1 - tx) + zoom_at(c, y0 + 1, x0 + 1) * tx) * ty;
        out.at(joint, r, col) = (1.0 - zoom_weight) * full.at(joint, r, col) + zoom_weight * resampled;
      }
    }
  }
  return out;
}

inline Json heatmap_header(const HeatmapStack& s, std::size_t byte_offset) {
  Json joints = Json::array();
  for (int c = 0; c < s.channels; ++c) joints.push_back(kJointNames[static_cast<std::size_t>(s.joint_of(c))]);
  return {{"branch", branch_name(s.branch)}, {"grid", s.grid},
          {"source_size", {s.source.width, s.source.height}}, {"joints", joints},
          {"dtype", "float64le"}, {"byte_offset", byte_offset}};
}

/// Appends the raw little-endian doubles of a stack.
inline void append_heatmap_bytes(std::vector<std::uint8_t>& out, const HeatmapStack& s) {
  static_assert(std::endian::native == std::endian::little, "heatmap files are little-endian");
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.values.data());
  out.insert(out.end(), p, p + s.values.size() * sizeof(double));
}

inline HeatmapStack heatmap_from_bytes(const Json& header, std::span<const std::uint8_t> bytes) {
  const auto branch = branch_from_name(header.at("branch").get<std::string>());
  const int grid = header.at("grid").get<int>();
  const auto src = header.at("source_size").get<std::vector<int>>();
  HeatmapStack s(branch, grid, ImageSize{src.at(0), src.at(1)});
  const auto offset = header.at("byte_offset").get<std::size_t>();
  const std::size_t n = s.values.size() * sizeof(double);
  if (offset + n > bytes.size()) fail(ErrorCode::kIo, "heatmap file truncated");
  std::memcpy(s.values.data(), bytes.data() + offset, n);
  return s;
}

}  // namespace egopose
