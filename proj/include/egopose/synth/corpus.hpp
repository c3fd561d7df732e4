// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "egopose/heatmap.hpp"
#include "egopose/image.hpp"
#include "egopose/json_util.hpp"
#include "egopose/lift.hpp"
#include "egopose/synth/pose_sampler.hpp"
#include "egopose/synth/renderer.hpp"

namespace egopose::synth {

constexpr int kCorpusFormatVersion = 1;

struct CorpusConfig {
  int frame_count = 100;
  std::uint64_t seed = 1;
  ImageSize image_size{256, 256};
  bool rgb = false;
  int heatmap_grid = kDefaultHeatmapGrid;
  FisheyeCamera calibration = default_calibration();
  double gamma_min = 0.6;
  double gamma_max = 1.6;
  std::string background_dir;
  SamplerConfig sampler;

  /// The lens at the output resolution.
  FisheyeCamera camera() const {
    return calibration.image_size() == image_size ? calibration : calibration.resized(image_size);
  }
};

inline Json corpus_config_to_json(const CorpusConfig& c) {
  Json lengths = Json::array();
  for (double l : c.sampler.bone_lengths) lengths.push_back(l);
  const auto& m = c.sampler.mount_position;
  const auto& n = c.sampler.neck_rotation_deg;
  return {{"frame_count", c.frame_count},
          {"seed", c.seed},
          {"image_size", {c.image_size.width, c.image_size.height}},
          {"color", c.rgb ? "rgb" : "gray"},
          {"heatmap_grid", c.heatmap_grid},
          {"calibration", camera_to_json(c.calibration)},
          {"gamma_range", {c.gamma_min, c.gamma_max}},
          {"background_dir", c.background_dir},
          {"perturb_translation_mm", c.sampler.perturb_translation_mm},
          {"perturb_rotation_deg", c.sampler.perturb_rotation_deg},
          {"body_bone_lengths_mm", lengths},
          {"actions", c.sampler.actions},
          {"mount_position_mm", {m.x(), m.y(), m.z()}},
          {"neck_rotation_deg", {n.x(), n.y(), n.z()}}};
}

/// Parses a corpus config. `calibration` may be inline or a path relative
/// to `base_dir`; omitted fields take their defaults.
inline CorpusConfig corpus_config_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  constexpr std::string_view ctx = "corpus config";
  check_keys(j,
             {"frame_count", "seed", "image_size", "color", "heatmap_grid", "calibration",
              "gamma_range", "background_dir", "perturb_translation_mm", "perturb_rotation_deg",
              "body_bone_lengths_mm", "actions", "mount_position_mm", "neck_rotation_deg"},
             ctx);
  CorpusConfig c;
  c.frame_count = optional<int>(j, "frame_count", c.frame_count);
  c.seed = optional<std::uint64_t>(j, "seed", c.seed);
  if (j.contains("image_size")) {
    const auto s = j.at("image_size").get<std::vector<int>>();
    if (s.size() != 2) fail(ErrorCode::kConfig, "corpus config: image_size needs 2 entries");
    c.image_size = {s[0], s[1]};
  }
  const auto color = optional<std::string>(j, "color", "gray");
  if (color != "gray" && color != "rgb") fail(ErrorCode::kConfig, "corpus config: color must be gray or rgb");
  c.rgb = color == "rgb";
  c.heatmap_grid = optional<int>(j, "heatmap_grid", c.heatmap_grid);
  if (j.contains("calibration")) {
    const auto& cal = j.at("calibration");
    c.calibration = cal.is_string() ? load_calibration(base_dir / cal.get<std::string>()) : camera_from_json(cal);
  }
  if (j.contains("gamma_range")) {
    const auto g = j.at("gamma_range").get<std::vector<double>>();
    if (g.size() != 2) fail(ErrorCode::kConfig, "corpus config: gamma_range needs 2 entries");
    c.gamma_min = g[0];
    c.gamma_max = g[1];
  }
  c.background_dir = optional<std::string>(j, "background_dir", "");
  if (!c.background_dir.empty() && std::filesystem::path(c.background_dir).is_relative()) {
    c.background_dir = (base_dir / c.background_dir).string();
  }
  auto& s = c.sampler;
  s.perturb_translation_mm = optional<double>(j, "perturb_translation_mm", s.perturb_translation_mm);
  s.perturb_rotation_deg = optional<double>(j, "perturb_rotation_deg", s.perturb_rotation_deg);
  if (j.contains("body_bone_lengths_mm")) {
    const auto l = j.at("body_bone_lengths_mm").get<std::vector<double>>();
    if (l.size() != kNumBones) fail(ErrorCode::kConfig, "corpus config: body_bone_lengths_mm needs 14 entries");
    std::copy(l.begin(), l.end(), s.bone_lengths.begin());
  }
  if (j.contains("actions")) {
    s.actions = j.at("actions").get<std::vector<std::string>>();
    for (const auto& a : s.actions) (void)action_profile(a);
  }
  if (j.contains("mount_position_mm")) {
    const auto m = j.at("mount_position_mm").get<std::vector<double>>();
    if (m.size() != 3) fail(ErrorCode::kConfig, "corpus config: mount_position_mm needs 3 entries");
    s.mount_position = Vec3(m[0], m[1], m[2]);
  }
  if (j.contains("neck_rotation_deg")) {
    const auto n = j.at("neck_rotation_deg").get<std::vector<double>>();
    if (n.size() != 3) fail(ErrorCode::kConfig, "corpus config: neck_rotation_deg needs 3 entries");
    s.neck_rotation_deg = Vec3(n[0], n[1], n[2]);
  }

  if (c.frame_count < 0) fail(ErrorCode::kConfig, "corpus config: frame_count must be >= 0");
  if (c.image_size.width <= 0 || c.image_size.width != c.image_size.height) {
    fail(ErrorCode::kConfig, "corpus config: image_size must be square and positive");
  }
  if (c.heatmap_grid <= 0 || c.heatmap_grid % 4 != 0) {
    fail(ErrorCode::kConfig, "corpus config: heatmap_grid must be a positive multiple of 4");
  }
  if (!(c.gamma_min > 0.0 && c.gamma_max >= c.gamma_min)) {
    fail(ErrorCode::kConfig, "corpus config: gamma_range must lie in (0, inf)");
  }
  if (s.perturb_translation_mm < 0.0 || s.perturb_rotation_deg < 0.0) {
    fail(ErrorCode::kConfig, "corpus config: perturbation ranges are half-widths and must be >= 0");
  }
  for (double l : s.bone_lengths) {
    if (!(l > 0.0)) fail(ErrorCode::kConfig, "corpus config: bone lengths must be positive");
  }
  return c;
}

/// One synthetic sample. Annotations come from the geometry, never from the
/// rendered pixels.
struct CorpusFrame {
  int index = 0;
  std::string action;
  double gamma = 1.0;
  Image image;
  Pose2D joints2d;
  Pose3D joints3d;
  std::array<double, kNumJoints> distances{};
  HeatmapStack heatmaps_full;
  HeatmapStack heatmaps_zoom;
  FisheyeCamera camera = default_calibration();
  CameraMount mount;
};

/// Analytic 2D annotation: projection of every in-view joint.
inline Pose2D annotate_2d(const Pose3D& pose, const FisheyeCamera& camera) { return reproject(pose, camera); }

/// Renders the body and fills every annotation for a camera-space pose.
inline CorpusFrame render_frame(const Pose3D& pose, const FisheyeCamera& camera, const Image& background,
                                double gamma, Rng& rng, int heatmap_grid = kDefaultHeatmapGrid) {
  CorpusFrame f;
  f.camera = camera;
  f.gamma = gamma;
  f.joints3d = pose;
  for (int j = 0; j < kNumJoints; ++j) f.distances[static_cast<std::size_t>(j)] = pose[j].norm();
  f.joints2d = annotate_2d(pose, camera);
  f.heatmaps_full = encode_heatmaps(f.joints2d, camera.image_size(), heatmap_grid);
  f.heatmaps_zoom = encode_zoom_heatmaps(f.joints2d, camera.image_size(), heatmap_grid);
  const auto body = build_body(pose, rng);
  f.image = quantize8(render_body(body, camera, background, gamma));
  return f;
}

/// PNG files of a background directory, sorted for determinism.
inline std::vector<std::filesystem::path> list_backgrounds(const std::string& dir) {
  std::vector<std::filesystem::path> out;
  if (dir.empty()) return out;
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::kIo, "background_dir '" + dir + "' is not a directory");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Frame `index` of the corpus; depends only on (config, index).
inline CorpusFrame generate_frame(const CorpusConfig& cfg, const std::vector<std::filesystem::path>& backgrounds,
                                  int index) {
  Rng rng(cfg.seed, static_cast<std::uint64_t>(index));
  const auto sample = sample_pose(rng, cfg.sampler);
  const double gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
  const int channels = cfg.rgb ? 3 : 1;
  Image background;
  if (backgrounds.empty()) {
    background = procedural_background(cfg.image_size, channels, rng);
  } else {
    Image raw = read_png(backgrounds[rng.index(backgrounds.size())]);
    if (channels == 1) raw = to_gray(raw);
    if (channels == 3 && raw.channels == 1) {
      Image rgb(raw.width, raw.height, 3);
      for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
          for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = raw.at(x, y);
      raw = rgb;
    }
    background = resize(raw, cfg.image_size.width, cfg.image_size.height);
  }
  auto frame = render_frame(sample.pose, cfg.camera(), background, gamma, rng, cfg.heatmap_grid);
  frame.index = index;
  frame.action = sample.action;
  frame.mount = sample.mount;
  return frame;
}

inline std::string frame_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d", index);
  return buf;
}

inline Json frame_to_json(const CorpusFrame& f) {
  Json j = pose_to_json(f.joints3d, f.joints2d);
  j["index"] = f.index;
  j["action"] = f.action;
  j["gamma"] = f.gamma;
  j["distances_mm"] = f.distances;
  j["camera"] = camera_to_json(f.camera);
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({f.mount.rotation(r, 0), f.mount.rotation(r, 1), f.mount.rotation(r, 2)});
  j["camera_mount"] = {{"rotation", rot},
                       {"position_mm", {f.mount.position.x(), f.mount.position.y(), f.mount.position.z()}}};
  const std::size_t zoom_offset = f.heatmaps_full.values.size() * sizeof(double);
  j["heatmaps"] = {{"file", frame_stem(f.index) + ".heatmaps.bin"},
                   {"full", heatmap_header(f.heatmaps_full, 0)},
                   {"zoom", heatmap_header(f.heatmaps_zoom, zoom_offset)}};
  return j;
}

inline void write_frame(const std::filesystem::path& dir, const CorpusFrame& f) {
  const auto stem = frame_stem(f.index);
  write_png(dir / (stem + ".png"), f.image);
  write_json_file(dir / (stem + ".json"), frame_to_json(f));
  std::vector<std::uint8_t> bytes;
  append_heatmap_bytes(bytes, f.heatmaps_full);
  append_heatmap_bytes(bytes, f.heatmaps_zoom);
  std::ofstream out(dir / (stem + ".heatmaps.bin"), std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "cannot write heatmaps for " + stem);
}

inline CorpusFrame read_frame(const std::filesystem::path& dir, int index) {
  const auto stem = frame_stem(index);
  try {
    const Json j = read_json_file(dir / (stem + ".json"));
    CorpusFrame f;
    f.index = j.at("index").get<int>();
    f.action = j.at("action").get<std::string>();
    f.gamma = j.at("gamma").get<double>();
    Json pose_part{{"joints3d_mm", j.at("joints3d_mm")}, {"joints2d_px", j.at("joints2d_px")},
                   {"confidence", j.at("confidence")}};
    auto pose = pose_from_json(pose_part);
    f.joints3d = pose.pose3d;
    f.joints2d = pose.pose2d;
    f.distances = j.at("distances_mm").get<std::array<double, kNumJoints>>();
    f.camera = camera_from_json(j.at("camera"));
    const auto& rot = j.at("camera_mount").at("rotation");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f.mount.rotation(r, c) = rot.at(r).at(c).get<double>();
    const auto pos = j.at("camera_mount").at("position_mm").get<std::vector<double>>();
    f.mount.position = Vec3(pos.at(0), pos.at(1), pos.at(2));
    const auto& hm = j.at("heatmaps");
    std::ifstream in(dir / hm.at("file").get<std::string>(), std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "missing heatmap file");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    f.heatmaps_full = heatmap_from_bytes(hm.at("full"), bytes);
    f.heatmaps_zoom = heatmap_from_bytes(hm.at("zoom"), bytes);
    f.image = read_png(dir / (stem + ".png"));
    return f;
  } catch (const Error& e) {
    throw Error(e.code(), (dir / stem).string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, (dir / stem).string() + ": malformed frame: " + e.what());
  }
}

/// Runs `work(i)` for i in [0, n) on up to `threads` workers. Each index is
/// independent, so results do not depend on scheduling.
template <typename Work>
void parallel_for(int n, int threads, Work&& work) {
  threads = std::max(1, std::min(threads, n));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

/// Writes index.json plus three files per frame under `out_dir`.
inline void generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir, int threads = 1) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create '" + out_dir.string() + "': " + ec.message());
  const auto backgrounds = list_backgrounds(cfg.background_dir);
  parallel_for(cfg.frame_count, threads, [&](int i) { write_frame(out_dir, generate_frame(cfg, backgrounds, i)); });
  write_json_file(out_dir / "index.json", Json{{"format", "egopose-corpus"},
                                               {"version", kCorpusFormatVersion},
                                               {"frame_count", cfg.frame_count},
                                               {"seed", cfg.seed},
                                               {"config", corpus_config_to_json(cfg)}});
}

struct Corpus {
  Json index;
  std::vector<CorpusFrame> frames;

  CorpusConfig config() const { return corpus_config_from_json(index.at("config")); }
};

inline Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.index = read_json_file(dir / "index.json");
  if (c.index.value("format", "") != "egopose-corpus") {
    fail(ErrorCode::kConfig, (dir / "index.json").string() + ": not an egopose corpus index");
  }
  const int n = c.index.at("frame_count").get<int>();
  c.frames.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) c.frames.push_back(read_frame(dir, i));
  return c;
}

/// Re-derives every annotation of a frame and lists the disagreements:
/// distance = |3D| (1e-9 mm), 2D = projection (1e-6 px), view flags, and
/// bit-exact heatmaps for both branches.
inline std::vector<std::string> validate_frame(const CorpusFrame& f) {
  std::vector<std::string> issues;
  const Pose2D expected = annotate_2d(f.joints3d, f.camera);
  for (int j = 0; j < kNumJoints; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    const std::string name(kJointNames[sj]);
    if (std::abs(f.distances[sj] - f.joints3d[j].norm()) > 1e-9) issues.push_back(name + ": distance mismatch");
    if (expected.in_fov[sj] != f.joints2d.in_fov[sj]) {
      issues.push_back(name + ": field-of-view flag mismatch");
    } else if (expected.in_fov[sj] && (expected.pixels[sj] - f.joints2d.pixels[sj]).norm() > 1e-6) {
      issues.push_back(name + ": 2D annotation differs from projection");
    }
  }
  const auto size = f.camera.image_size();
  if (encode_heatmaps(f.joints2d, size, f.heatmaps_full.grid).values != f.heatmaps_full.values) {
    issues.push_back("full-branch heatmaps differ from encoding");
  }
  if (encode_zoom_heatmaps(f.joints2d, size, f.heatmaps_zoom.grid).values != f.heatmaps_zoom.values) {
    issues.push_back("zoom-branch heatmaps differ from encoding");
  }
  if (f.image.width != size.width || f.image.height != size.height) issues.push_back("image size mismatch");
  return issues;
}

}  // namespace egopose::synth
