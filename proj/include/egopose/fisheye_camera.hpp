// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "egopose/error.hpp"
#include "egopose/json_util.hpp"

namespace egopose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Angle between two non-zero vectors, accurate near 0 and pi.
inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Polynomial omnidirectional camera. A pixel at centered coordinates (u, v)
/// with radius rho = |(u, v)| sees the ray [u, v, f(rho)], where
/// f(rho) = a0 + a1 rho + a2 rho^2 + ...
///
/// Camera frame: x to the image right, y down the image, z along the optical
/// axis into the scene. Pixel coordinates are continuous; pixel (i, j) covers
/// [i, i+1) x [j, j+1).
///
/// f(0) must be positive and the incidence angle atan2(rho, f(rho)) must be
/// strictly increasing on [0, max_radius]. Beyond 90 degrees of incidence
/// f(rho) turns negative, which is what lets the model see past the image
/// plane (the default calibration covers 182 degrees).
class FisheyeCamera {
 public:
  static constexpr int kMonotonicitySamples = 4096;

  FisheyeCamera(std::vector<double> coeffs, Vec2 principal_point, ImageSize image_size,
                double max_radius, double fov_half_angle)
      : coeffs_(std::move(coeffs)),
        principal_point_(std::move(principal_point)),
        image_size_(image_size),
        max_radius_(max_radius),
        fov_half_angle_(fov_half_angle) {
    validate();
  }

  const std::vector<double>& coeffs() const { return coeffs_; }
  const Vec2& principal_point() const { return principal_point_; }
  ImageSize image_size() const { return image_size_; }
  double max_radius() const { return max_radius_; }
  double fov_half_angle() const { return fov_half_angle_; }

  /// f(rho) by Horner's scheme.
  double eval_poly(double rho) const {
    if (!(rho >= 0.0 && rho <= max_radius_)) {
      fail(ErrorCode::kDomain, "rho=" + std::to_string(rho) + " outside [0, " +
                                   std::to_string(max_radius_) + "]");
    }
    return horner(rho);
  }

  /// Incidence angle (from the optical axis) of the ray at pixel radius rho.
  double incidence_angle(double rho) const { return std::atan2(rho, eval_poly(rho)); }

  /// Unnormalized ray [u, v, f(rho)] through a pixel.
  Vec3 backproject(const Vec2& pixel) const {
    if (!(pixel.x() >= 0.0 && pixel.x() <= image_size_.width && pixel.y() >= 0.0 &&
          pixel.y() <= image_size_.height)) {
      fail(ErrorCode::kOutOfFov, "pixel outside image bounds");
    }
    const double u = pixel.x() - principal_point_.x();
    const double v = pixel.y() - principal_point_.y();
    const double rho = std::hypot(u, v);
    if (rho > max_radius_) fail(ErrorCode::kOutOfFov, "pixel radius beyond max_radius");
    return {u, v, horner(rho)};
  }

  bool in_fov(const Vec3& direction) const {
    const double n = direction.norm();
    if (!(n > 0.0)) return false;
    return std::atan2(direction.head<2>().norm(), direction.z()) <= fov_half_angle_;
  }

  /// Pixel whose back-projected ray is parallel to `direction`.
  ///
  /// With the direction normalized to (r, z) = (sin t, cos t), the function
  /// g(rho) = f(rho) r - rho z equals |(rho, f)| sin(t - phi(rho)); it is
  /// positive before the root and negative after, so bisection applies.
  Vec2 project(const Vec3& direction) const {
    const double n = direction.norm();
    if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorCode::kDomain, "direction must be non-zero");
    const Vec3 d = direction / n;
    const double r_xy = d.head<2>().norm();
    const double theta = std::atan2(r_xy, d.z());
    if (theta > fov_half_angle_) {
      fail(ErrorCode::kOutOfFov, "incidence " + std::to_string(rad_to_deg(theta)) +
                                     " deg exceeds the field of view");
    }
    if (r_xy == 0.0) return principal_point_;

    auto g = [&](double rho) { return horner(rho) * r_xy - rho * d.z(); };
    double lo = 0.0;
    double hi = max_radius_;
    if (g(hi) > 0.0) {
      fail(ErrorCode::kCalibrationInvalid, "no root of the projection equation within max_radius");
    }
    while (hi - lo > kProjectTolerance) {
      const double mid = 0.5 * (lo + hi);
      if (g(mid) > 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double rho = 0.5 * (lo + hi);
    return principal_point_ + rho * Vec2(d.x(), d.y()) / r_xy;
  }

  /// Same lens at a different pixel resolution (uniform scale).
  FisheyeCamera resized(ImageSize size) const {
    const double s = static_cast<double>(size.width) / image_size_.width;
    const double sy = static_cast<double>(size.height) / image_size_.height;
    if (std::abs(s - sy) > 1e-12) fail(ErrorCode::kShape, "resize must preserve aspect ratio");
    std::vector<double> scaled(coeffs_.size());
    for (std::size_t i = 0; i < coeffs_.size(); ++i) {
      scaled[i] = coeffs_[i] * std::pow(s, 1.0 - static_cast<double>(i));
    }
    return {std::move(scaled), principal_point_ * s, size, max_radius_ * s, fov_half_angle_};
  }

  static constexpr double kProjectTolerance = 1e-9;

 private:
  double horner(double rho) const {
    double acc = 0.0;
    for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * rho + *it;
    return acc;
  }

  void validate() const {
    if (coeffs_.size() < 5) fail(ErrorCode::kCalibrationInvalid, "need at least 5 coefficients");
    for (double c : coeffs_) {
      if (!std::isfinite(c)) fail(ErrorCode::kCalibrationInvalid, "non-finite coefficient");
    }
    if (image_size_.width <= 0 || image_size_.height <= 0) {
      fail(ErrorCode::kCalibrationInvalid, "image size must be positive");
    }
    if (!(max_radius_ > 0.0)) fail(ErrorCode::kCalibrationInvalid, "max_radius must be positive");
    if (!(fov_half_angle_ > 0.0 && fov_half_angle_ < std::numbers::pi)) {
      fail(ErrorCode::kCalibrationInvalid, "fov half angle must lie in (0, pi)");
    }
    if (!(horner(0.0) > 0.0)) fail(ErrorCode::kCalibrationInvalid, "f(0) must be positive");
    double prev = 0.0;
    for (int i = 1; i <= kMonotonicitySamples; ++i) {
      const double rho = max_radius_ * i / kMonotonicitySamples;
      const double phi = std::atan2(rho, horner(rho));
      if (!(phi > prev)) {
        fail(ErrorCode::kCalibrationInvalid,
             "incidence angle not strictly increasing near rho=" + std::to_string(rho));
      }
      prev = phi;
    }
  }

  std::vector<double> coeffs_;
  Vec2 principal_point_;
  ImageSize image_size_;
  double max_radius_;
  double fov_half_angle_;
};

struct Correspondence {
  Vec2 pixel;
  Vec3 direction;
};

/// Everything about a camera except its polynomial.
struct CameraFrame {
  Vec2 principal_point;
  ImageSize image_size;
  double max_radius = 0.0;
  double fov_half_angle = 0.0;
};

/// Linear least squares for the polynomial coefficients from pixel/ray pairs.
/// Each pair contributes f(rho) r - rho z = 0 for its unit direction; rho is
/// normalized by max_radius for conditioning. Degrees below 4 are zero-padded.
inline FisheyeCamera fit_coeffs(std::span<const Correspondence> correspondences, int degree,
                                const CameraFrame& frame) {
  if (degree < 0) fail(ErrorCode::kFit, "degree must be non-negative");
  const auto n_coeffs = static_cast<Eigen::Index>(degree + 1);
  if (static_cast<Eigen::Index>(correspondences.size()) < n_coeffs) {
    fail(ErrorCode::kFit, "need at least degree+1 correspondences, got " +
                              std::to_string(correspondences.size()));
  }
  const double scale = frame.max_radius;
  Eigen::MatrixXd a(static_cast<Eigen::Index>(correspondences.size()), n_coeffs);
  Eigen::VectorXd b(a.rows());
  for (Eigen::Index row = 0; row < a.rows(); ++row) {
    const auto& c = correspondences[static_cast<std::size_t>(row)];
    const Vec3 d = c.direction.normalized();
    if (std::atan2(d.head<2>().norm(), d.z()) > frame.fov_half_angle) {
      fail(ErrorCode::kOutOfFov, "correspondence direction outside the field of view");
    }
    const double rho = (c.pixel - frame.principal_point).norm();
    const double r_xy = d.head<2>().norm();
    double x = 1.0;
    for (Eigen::Index k = 0; k < n_coeffs; ++k) {
      a(row, k) = x * r_xy;
      x *= rho / scale;
    }
    b(row) = rho * d.z();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < n_coeffs) fail(ErrorCode::kFit, "rank-deficient calibration system");
  const Eigen::VectorXd beta = qr.solve(b);
  std::vector<double> coeffs(static_cast<std::size_t>(std::max<Eigen::Index>(n_coeffs, 5)), 0.0);
  for (Eigen::Index k = 0; k < n_coeffs; ++k) {
    coeffs[static_cast<std::size_t>(k)] = beta(k) / std::pow(scale, static_cast<double>(k));
  }
  const FisheyeCamera fitted(coeffs, frame.principal_point, frame.image_size, frame.max_radius,
                             frame.fov_half_angle);
  // A fit can fall slightly short of the requested angle at the rim; the
  // usable field of view is what the polynomial covers.
  const double reach = fitted.incidence_angle(frame.max_radius);
  if (reach >= frame.fov_half_angle) return fitted;
  return {std::move(coeffs), frame.principal_point, frame.image_size, frame.max_radius, reach};
}

/// Samples of an equidistant fisheye r = k theta whose image circle of radius
/// `max_radius` spans `fov_half_angle`.
inline std::vector<Correspondence> equidistant_samples(const CameraFrame& frame, int count) {
  const double k = frame.max_radius / frame.fov_half_angle;
  std::vector<Correspondence> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double theta = frame.fov_half_angle * i / (count - 1);
    // Golden-angle azimuths spread samples around the circle.
    const double azimuth = 2.399963229728653 * i;
    const Vec2 dir2(std::cos(azimuth), std::sin(azimuth));
    out.push_back({frame.principal_point + k * theta * dir2,
                   Vec3(std::sin(theta) * dir2.x(), std::sin(theta) * dir2.y(), std::cos(theta))});
  }
  return out;
}

constexpr double kDefaultFovHalfAngleDeg = 91.0;
constexpr int kDefaultCalibrationWidth = 1024;

/// Synthetic stand-in for a real calibration: a degree-4 fit of the
/// equidistant model, 182 degree FOV filling a 1024 px wide image circle.
/// Other sizes are the same lens rescaled.
inline FisheyeCamera default_calibration(ImageSize size = {kDefaultCalibrationWidth,
                                                           kDefaultCalibrationWidth}) {
  static const FisheyeCamera base = [] {
    const ImageSize s{kDefaultCalibrationWidth, kDefaultCalibrationWidth};
    const CameraFrame frame{Vec2(s.width / 2.0, s.height / 2.0), s, s.width / 2.0,
                            deg_to_rad(kDefaultFovHalfAngleDeg)};
    return fit_coeffs(equidistant_samples(frame, 2001), 4, frame);
  }();
  return size == base.image_size() ? base : base.resized(size);
}

inline Json camera_to_json(const FisheyeCamera& cam) {
  return Json{{"coeffs", cam.coeffs()},
              {"principal_point", {cam.principal_point().x(), cam.principal_point().y()}},
              {"image_size", {cam.image_size().width, cam.image_size().height}},
              {"max_radius", cam.max_radius()},
              {"fov_half_angle_deg", rad_to_deg(cam.fov_half_angle())}};
}

inline FisheyeCamera camera_from_json(const Json& j) {
  constexpr std::string_view ctx = "calibration";
  check_keys(j, {"coeffs", "principal_point", "image_size", "max_radius", "fov_half_angle_deg"},
             ctx);
  auto coeffs = require<std::vector<double>>(j, "coeffs", ctx);
  const auto pp = require<std::vector<double>>(j, "principal_point", ctx);
  const auto size = require<std::vector<int>>(j, "image_size", ctx);
  if (pp.size() != 2 || size.size() != 2) {
    fail(ErrorCode::kConfig, "calibration: principal_point and image_size need 2 entries");
  }
  return {std::move(coeffs), Vec2(pp[0], pp[1]), ImageSize{size[0], size[1]},
          require<double>(j, "max_radius", ctx),
          deg_to_rad(require<double>(j, "fov_half_angle_deg", ctx))};
}

inline FisheyeCamera load_calibration(const std::filesystem::path& path) {
  try {
    return camera_from_json(read_json_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace egopose
