// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>

#include "egopose/heatmap.hpp"
#include "egopose/image.hpp"
#include "egopose/rng.hpp"
#include "egopose/synth/pose_sampler.hpp"

namespace egopose::synth {

/// Limb radii in millimeters, bone order as in BoneTopology::standard().
constexpr std::array<double, kNumBones> kBoneRadii = {55, 55, 45, 45, 35, 35, 95,
                                                      95, 65, 65, 48, 48, 35, 35};
constexpr double kHeadRadius = 100.0;
constexpr double kHeadAboveNeck = 160.0;

struct Capsule {
  Vec3 a;
  Vec3 b;
  double radius;
  std::array<float, 3> albedo;
};

struct Sphere {
  Vec3 center;
  double radius;
  std::array<float, 3> albedo;
};

/// Nearest positive hit distance of a unit-direction ray from the origin.
inline std::optional<double> intersect_sphere(const Vec3& dir, const Vec3& center, double radius) {
  const double b = dir.dot(center);
  const double c = center.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  const double t0 = b - s;
  if (t0 > 0.0) return t0;
  const double t1 = b + s;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

/// Ray/capsule intersection: the cylinder body plus both end caps. Returns
/// the hit distance and outward normal.
inline std::optional<std::pair<double, Vec3>> intersect_capsule(const Vec3& dir, const Capsule& cap) {
  const Vec3 ba = cap.b - cap.a;
  const Vec3 oa = -cap.a;
  const double baba = ba.dot(ba);
  const double bard = ba.dot(dir);
  const double baoa = ba.dot(oa);
  const double rdoa = dir.dot(oa);
  const double oaoa = oa.dot(oa);
  const double r2 = cap.radius * cap.radius;
  std::optional<std::pair<double, Vec3>> best;
  auto consider = [&](double t, const Vec3& n) {
    if (t > 0.0 && (!best || t < best->first)) best = std::make_pair(t, n);
  };
  if (baba > 0.0) {
    const double a = baba - bard * bard;
    const double b = baba * rdoa - baoa * bard;
    const double c = baba * oaoa - baoa * baoa - r2 * baba;
    const double h = b * b - a * c;
    if (a > 1e-12 && h >= 0.0) {
      for (double t : {(-b - std::sqrt(h)) / a, (-b + std::sqrt(h)) / a}) {
        const double y = baoa + t * bard;
        if (y > 0.0 && y < baba) {
          const Vec3 p = t * dir;
          const Vec3 axis_point = cap.a + ba * (y / baba);
          consider(t, (p - axis_point).normalized());
        }
      }
    }
  }
  for (const Vec3* end : {&cap.a, &cap.b}) {
    if (auto t = intersect_sphere(dir, *end, cap.radius)) consider(*t, (*t * dir - *end).normalized());
  }
  return best;
}

struct BodyGeometry {
  std::vector<Capsule> capsules;
  Sphere head;
};

/// Capsules per bone plus a head sphere above the neck, in camera space.
/// Albedo jitter comes from `rng`.
inline BodyGeometry build_body(const Pose3D& pose, Rng& rng) {
  const auto topo = BoneTopology::standard();
  const std::array<float, 3> shirt{static_cast<float>(rng.uniform(0.3, 0.9)),
                                   static_cast<float>(rng.uniform(0.3, 0.9)),
                                   static_cast<float>(rng.uniform(0.3, 0.9))};
  const std::array<float, 3> pants{static_cast<float>(rng.uniform(0.15, 0.6)),
                                   static_cast<float>(rng.uniform(0.15, 0.6)),
                                   static_cast<float>(rng.uniform(0.15, 0.7))};
  const std::array<float, 3> skin{0.85f, 0.68f, 0.55f};
  BodyGeometry body;
  for (std::size_t i = 0; i < kNumBones; ++i) {
    const int child = index_of(topo.bones[i].child);
    std::array<float, 3> albedo = is_lower_body(child) ? pants : shirt;
    if (topo.bones[i].child == JointId::kLeftWrist || topo.bones[i].child == JointId::kRightWrist) albedo = skin;
    body.capsules.push_back({pose[topo.bones[i].parent], pose[topo.bones[i].child], kBoneRadii[i], albedo});
  }
  const Vec3 hip_mid = 0.5 * (pose[JointId::kLeftHip] + pose[JointId::kRightHip]);
  Vec3 up = pose[JointId::kNeck] - hip_mid;
  up = up.norm() > 0.0 ? up.normalized() : Vec3(0, -1, 0);
  body.head = {pose[JointId::kNeck] + kHeadAboveNeck * up, kHeadRadius, skin};
  return body;
}

/// Casts one ray per pixel through the lens, shades the nearest hit by
/// surface orientation and depth, composites over `background`, then applies
/// out = in^gamma. Pixels beyond the image circle stay black.
inline Image render_body(const BodyGeometry& body, const FisheyeCamera& camera,
                         const Image& background, double gamma) {
  if (background.data.empty()) fail(ErrorCode::kConfig, "render needs a background image");
  if (!(gamma > 0.0)) fail(ErrorCode::kDomain, "gamma must be positive");
  const auto size = camera.image_size();
  if (background.width != size.width || background.height != size.height) {
    fail(ErrorCode::kShape, "background size differs from the camera image size");
  }
  Image out(size.width, size.height, background.channels);
  const Vec2 pp = camera.principal_point();
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const Vec2 pixel(x + 0.5, y + 0.5);
      if ((pixel - pp).norm() > camera.max_radius()) continue;
      const Vec3 dir = camera.backproject(pixel).normalized();
      double best_t = std::numeric_limits<double>::infinity();
      Vec3 normal = Vec3::Zero();
      const std::array<float, 3>* albedo = nullptr;
      for (const auto& cap : body.capsules) {
        if (auto hit = intersect_capsule(dir, cap); hit && hit->first < best_t) {
          best_t = hit->first;
          normal = hit->second;
          albedo = &cap.albedo;
        }
      }
      if (auto t = intersect_sphere(dir, body.head.center, body.head.radius); t && *t < best_t) {
        best_t = *t;
        normal = (*t * dir - body.head.center).normalized();
        albedo = &body.head.albedo;
      }
      for (int c = 0; c < out.channels; ++c) {
        double v = background.at(x, y, c);
        if (albedo != nullptr) {
          const double facing = std::abs(normal.dot(dir));
          const double depth = std::clamp(1.25 - best_t / 2400.0, 0.45, 1.0);
          const double a = out.channels == 1
                               ? 0.299 * (*albedo)[0] + 0.587 * (*albedo)[1] + 0.114 * (*albedo)[2]
                               : (*albedo)[static_cast<std::size_t>(c)];
          v = a * (0.3 + 0.7 * facing) * depth;
        }
        out.at(x, y, c) = static_cast<float>(gamma == 1.0 ? v : std::pow(v, gamma));
      }
    }
  }
  return out;
}

/// Smooth value noise: a coarse random lattice, bilinearly upsampled, plus
/// a little per-pixel grain.
inline Image procedural_background(ImageSize size, int channels, Rng& rng) {
  constexpr int kLattice = 9;
  Image coarse(kLattice, kLattice, channels);
  const double base = rng.uniform(0.2, 0.6);
  for (auto& v : coarse.data) v = static_cast<float>(std::clamp(base + rng.symmetric(0.25), 0.0, 1.0));
  Image out = resize(coarse, size.width, size.height);
  for (auto& v : out.data) v = std::clamp(v + static_cast<float>(rng.symmetric(0.03)), 0.0f, 1.0f);
  return out;
}

}  // namespace egopose::synth
