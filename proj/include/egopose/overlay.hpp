// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>

#include "egopose/image.hpp"
#include "egopose/skeleton.hpp"

namespace egopose {

using Rgb = std::array<float, 3>;

inline void plot_disc(Image& img, const Vec2& center, double radius, const Rgb& color) {
  const int x0 = static_cast<int>(std::floor(center.x() - radius));
  const int y0 = static_cast<int>(std::floor(center.y() - radius));
  const int x1 = static_cast<int>(std::ceil(center.x() + radius));
  const int y1 = static_cast<int>(std::ceil(center.y() + radius));
  for (int y = std::max(y0, 0); y <= std::min(y1, img.height - 1); ++y) {
    for (int x = std::max(x0, 0); x <= std::min(x1, img.width - 1); ++x) {
      if ((Vec2(x + 0.5, y + 0.5) - center).norm() > radius) continue;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[static_cast<std::size_t>(c)];
    }
  }
}

inline void plot_segment(Image& img, const Vec2& a, const Vec2& b, double width, const Rgb& color) {
  const int steps = std::max(1, static_cast<int>(std::ceil((b - a).norm() * 2.0)));
  for (int i = 0; i <= steps; ++i) plot_disc(img, a + (b - a) * (static_cast<double>(i) / steps), width / 2, color);
}

/// Skeleton drawn over the image: left side red, right side blue, center
/// joints green. Only joints that are in view are drawn.
inline Image draw_overlay(const Image& input, const Pose2D& pose) {
  Image img(input.width, input.height, 3);
  for (int y = 0; y < input.height; ++y) {
    for (int x = 0; x < input.width; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = input.at(x, y, input.channels == 3 ? c : 0);
    }
  }
  const double scale = std::max(1.0, input.width / 256.0);
  auto side_color = [](std::string_view name) -> Rgb {
    if (name.rfind("left", 0) == 0) return {0.95f, 0.2f, 0.2f};
    if (name.rfind("right", 0) == 0) return {0.2f, 0.45f, 0.95f};
    return {0.2f, 0.9f, 0.3f};
  };
  const auto topo = BoneTopology::standard();
  for (const auto& bone : topo.bones) {
    const auto p = static_cast<std::size_t>(bone.parent);
    const auto c = static_cast<std::size_t>(bone.child);
    if (!pose.in_fov[p] || !pose.in_fov[c]) continue;
    plot_segment(img, pose.pixels[p], pose.pixels[c], 1.5 * scale, side_color(kJointNames[c]));
  }
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    if (pose.in_fov[j]) plot_disc(img, pose.pixels[j], 2.0 * scale, {1.0f, 1.0f, 0.2f});
  }
  return img;
}

}  // namespace egopose
