// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "egopose/heatmap.hpp"
#include "egopose/image.hpp"
#include "egopose/json_util.hpp"
#include "egopose/nn/autodiff.hpp"
#include "egopose/rng.hpp"
#include "egopose/skeleton.hpp"

namespace egopose::nn {

/// Architecture hyperparameters. Block indices are 1-based.
struct NetConfig {
  std::string profile = "test";
  int input_size = 64;
  int stem_channels = 8;
  std::vector<int> block_channels{8, 12, 16, 16};
  std::vector<int> downsample_blocks{2, 3};
  std::vector<int> supervision_taps{2, 3};
  std::vector<int> distance_taps{3, 4};
  int head_channels = 16;
  int heatmap_grid = 16;
  int distance_channels = 16;
  Branch branch = Branch::kFull;

  int blocks() const { return static_cast<int>(block_channels.size()); }
  int channels_after(int block) const {
    return block == 0 ? stem_channels : block_channels[static_cast<std::size_t>(block - 1)];
  }
  bool downsamples(int block) const {
    return std::find(downsample_blocks.begin(), downsample_blocks.end(), block) != downsample_blocks.end();
  }
  /// Feature-map side after `block` (0 = after the stride-2 stem).
  int resolution_after(int block) const {
    int r = (input_size + 1) / 2;
    for (int b = 1; b <= block; ++b) {
      if (downsamples(b)) r = (r + 1) / 2;
    }
    return r;
  }
  int distance_resolution() const { return resolution_after(distance_taps.front()); }
  int distance_input_channels() const {
    int c = 0;
    for (int t : distance_taps) c += channels_after(t);
    return c;
  }

  static NetConfig test_profile() { return {}; }

  static NetConfig paper_profile() {
    NetConfig c;
    c.profile = "paper";
    c.input_size = 256;
    c.stem_channels = 16;
    c.block_channels = {16, 16, 16, 32, 32, 32, 32, 64, 64, 64, 64, 64, 64, 64, 64};
    c.downsample_blocks = {1, 4, 8};
    c.supervision_taps = {11, 14};
    c.distance_taps = {13, 15};
    c.head_channels = 64;
    c.heatmap_grid = kDefaultHeatmapGrid;
    c.distance_channels = 64;
    return c;
  }

  static NetConfig for_profile(const std::string& name) {
    if (name == "test") return test_profile();
    if (name == "paper") return paper_profile();
    fail(ErrorCode::kConfig, "unknown profile '" + name + "' (expected test or paper)");
  }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::kConfig, "net config: " + m); };
    const int b = blocks();
    if (b < 1) bad("at least one residual block is required");
    if (input_size < 8) bad("input_size must be at least 8");
    for (int c : block_channels) {
      if (c < 1) bad("channel widths must be positive");
    }
    if (stem_channels < 1 || head_channels < 1 || distance_channels < 1) bad("channel widths must be positive");
    if (heatmap_grid < 4 || heatmap_grid % 4 != 0) bad("heatmap_grid must be a positive multiple of 4");
    for (int d : downsample_blocks) {
      if (d < 1 || d > b) bad("downsample block " + std::to_string(d) + " out of range");
    }
    if (2 * resolution_after(b) != heatmap_grid) {
      bad("final features (" + std::to_string(resolution_after(b)) + "px) upsampled 2x must equal heatmap_grid " +
          std::to_string(heatmap_grid));
    }
    std::set<int> seen;
    for (int t : supervision_taps) {
      if (t < 1 || t >= b) bad("supervision tap " + std::to_string(t) + " must satisfy 1 <= tap < blocks");
      if (!seen.insert(t).second) bad("duplicate supervision tap");
      const int r = resolution_after(t);
      if (heatmap_grid % r != 0) bad("supervision tap resolution must divide heatmap_grid");
    }
    if (distance_taps.empty()) bad("at least one distance tap is required");
    for (int t : distance_taps) {
      if (t < 1 || t > b) bad("distance tap " + std::to_string(t) + " must satisfy 1 <= tap <= blocks");
      if (resolution_after(t) != distance_resolution()) bad("distance taps must share one resolution");
    }
  }
};

inline Json net_config_to_json(const NetConfig& c) {
  return {{"profile", c.profile},
          {"input_size", c.input_size},
          {"stem_channels", c.stem_channels},
          {"block_channels", c.block_channels},
          {"downsample_blocks", c.downsample_blocks},
          {"supervision_taps", c.supervision_taps},
          {"distance_taps", c.distance_taps},
          {"head_channels", c.head_channels},
          {"heatmap_grid", c.heatmap_grid},
          {"distance_channels", c.distance_channels},
          {"branch", std::string(branch_name(c.branch))}};
}

/// Starts from the named profile (default "test") and applies overrides.
inline NetConfig net_config_from_json(const Json& j) {
  constexpr std::string_view ctx = "net config";
  check_keys(j,
             {"profile", "input_size", "stem_channels", "block_channels", "downsample_blocks", "supervision_taps",
              "distance_taps", "head_channels", "heatmap_grid", "distance_channels", "branch"},
             ctx);
  NetConfig c = NetConfig::for_profile(j.value("profile", std::string("test")));
  try {
    c.input_size = j.value("input_size", c.input_size);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.block_channels = j.value("block_channels", c.block_channels);
    c.downsample_blocks = j.value("downsample_blocks", c.downsample_blocks);
    c.supervision_taps = j.value("supervision_taps", c.supervision_taps);
    c.distance_taps = j.value("distance_taps", c.distance_taps);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.heatmap_grid = j.value("heatmap_grid", c.heatmap_grid);
    c.distance_channels = j.value("distance_channels", c.distance_channels);
    if (j.contains("branch")) c.branch = branch_from_name(j.at("branch").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string(ctx) + ": " + e.what());
  }
  c.validate();
  return c;
}

/// Learnable tensors keyed by layer name, e.g. "full.block3.conv1.w".
struct NetParams {
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorCode::kConfig, "missing parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }
};

enum class Init { kHidden, kResidual, kOutput };

struct ParamSpec {
  std::vector<int> shape;
  int fan_in = 1;
  Init init = Init::kHidden;
};

inline int branch_joints(Branch b) { return b == Branch::kFull ? kNumJoints : kNumLowerBodyJoints; }
inline std::string branch_prefix(Branch b) { return std::string(branch_name(b)) + "."; }

/// Heads that read the backbone features.
inline constexpr std::array<std::string_view, 3> kHeadPrefixes = {"distance.", "distance_nozoom.", "baseline."};

/// Every parameter's shape for a configuration.
inline std::map<std::string, ParamSpec> param_specs(const NetConfig& c) {
  std::map<std::string, ParamSpec> s;
  auto conv = [&](const std::string& name, int cout, int cin, int k, Init init) {
    s[name + ".w"] = {{cout, cin, k, k}, cin * k * k, init};
    s[name + ".b"] = {{cout}, 0, init};
  };
  auto deconv = [&](const std::string& name, int cin, int cout, int k, int stride, Init init) {
    s[name + ".w"] = {{cin, cout, k, k}, std::max(1, cin * k * k / (stride * stride)), init};
    s[name + ".b"] = {{cout}, 0, init};
  };
  auto fc = [&](const std::string& name, int out, int in) {
    s[name + ".w"] = {{out, in}, in, Init::kOutput};
    s[name + ".b"] = {{out}, 0, Init::kOutput};
  };
  auto residual = [&](const std::string& name, int cin, int cout) {
    conv(name + ".conv1", cout, cin, 3, Init::kHidden);
    conv(name + ".conv2", cout, cout, 3, Init::kResidual);
  };
  for (Branch br : {Branch::kFull, Branch::kZoom}) {
    const std::string p = branch_prefix(br);
    const int joints = branch_joints(br);
    conv(p + "stem", c.stem_channels, 1, 3, Init::kHidden);
    for (int b = 1; b <= c.blocks(); ++b) {
      const int cin = c.channels_after(b - 1);
      const int cout = c.channels_after(b);
      const std::string name = p + "block" + std::to_string(b);
      residual(name, cin, cout);
      if (cin != cout || c.downsamples(b)) conv(name + ".proj", cout, cin, 1, Init::kHidden);
    }
    deconv(p + "head.deconv", c.channels_after(c.blocks()), c.head_channels, 4, 2, Init::kHidden);
    conv(p + "head.conv1", c.head_channels, c.head_channels, 3, Init::kHidden);
    conv(p + "head.conv2", joints, c.head_channels, 1, Init::kOutput);
    for (int t : c.supervision_taps) {
      const int f = c.heatmap_grid / c.resolution_after(t);
      const std::string name = p + "tap" + std::to_string(t);
      if (f == 1) {
        conv(name, joints, c.channels_after(t), 1, Init::kOutput);
      } else {
        deconv(name, c.channels_after(t), joints, f, f, Init::kOutput);
      }
    }
  }
  const int dr = detail::conv_out(c.distance_resolution(), 3, 2, 1);
  for (const std::string head : {"distance", "distance_nozoom"}) {
    const int cin = c.distance_input_channels() * (head == "distance" ? 2 : 1);
    conv(head + ".reduce", c.distance_channels, cin, 1, Init::kHidden);
    residual(head + ".block1", c.distance_channels, c.distance_channels);
    residual(head + ".block2", c.distance_channels, c.distance_channels);
    conv(head + ".conv", c.distance_channels, c.distance_channels, 3, Init::kHidden);
    fc(head + ".fc", kNumJoints, c.distance_channels * dr * dr);
  }
  const int br = detail::conv_out(c.resolution_after(c.blocks()), 3, 2, 1);
  conv("baseline.conv", c.distance_channels, c.channels_after(c.blocks()), 3, Init::kHidden);
  fc("baseline.fc", 3 * kNumJoints, c.distance_channels * br * br);
  return s;
}

/// Typical camera-to-joint distance in meters; the distance heads start here.
inline constexpr double kInitialDistanceM = 0.8;

/// Scaled uniform fan-in initialization. Each tensor draws from its own
/// stream keyed by name, so adding a layer leaves the others unchanged.
inline NetParams init_params(const NetConfig& c, std::uint64_t seed) {
  c.validate();
  NetParams p;
  for (const auto& [name, spec] : param_specs(c)) {
    Tensor t(spec.shape);
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (bias) {
      if (name.rfind("distance", 0) == 0 && name.find(".fc.") != std::string::npos) {
        std::fill(t.data.begin(), t.data.end(), kInitialDistanceM);
      }
    } else {
      const double base = spec.init == Init::kHidden ? std::sqrt(6.0 / spec.fan_in) : std::sqrt(3.0 / spec.fan_in);
      const double scale = spec.init == Init::kResidual ? 0.5 : spec.init == Init::kOutput ? 0.01 : 1.0;
      std::uint64_t h = 1469598103934665603ULL;
      for (char ch : name) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
      Rng rng(seed, h);
      for (auto& v : t.data) v = rng.symmetric(base * scale);
    }
    p.tensors.emplace(name, std::move(t));
  }
  return p;
}

/// Shape and finiteness check of a parameter set against a configuration.
inline void check_params(const NetParams& p, const NetConfig& c) {
  const auto specs = param_specs(c);
  for (const auto& [name, spec] : specs) {
    const Tensor& t = p.at(name);
    if (t.dims != spec.shape) {
      Tensor e;
      e.dims = spec.shape;
      fail(ErrorCode::kConfig, "parameter '" + name + "' has shape " + t.shape_string() + ", config expects " +
                                   e.shape_string());
    }
    for (double v : t.data) {
      if (!std::isfinite(v)) fail(ErrorCode::kConfig, "parameter '" + name + "' holds a non-finite value");
    }
  }
  for (const auto& [name, _] : p.tensors) {
    if (!specs.count(name)) fail(ErrorCode::kConfig, "unexpected parameter '" + name + "'");
  }
}

using Trainable = std::function<bool(const std::string&)>;

inline Trainable train_prefix(std::string prefix) {
  return [prefix = std::move(prefix)](const std::string& name) { return name.rfind(prefix, 0) == 0; };
}
inline Trainable train_all() {
  return [](const std::string&) { return true; };
}
inline Trainable train_none() {
  return [](const std::string&) { return false; };
}

/// Puts parameters on a tape on first use.
class Binder {
 public:
  Binder(Tape& tape, const NetParams& params, Trainable trainable)
      : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

  Tape::Id operator()(const std::string& name) {
    const auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const Tape::Id id = tape_.leaf(params_.at(name), trainable_(name));
    ids_.emplace(name, id);
    return id;
  }
  Tape& tape() { return tape_; }
  const std::map<std::string, Tape::Id>& bound() const { return ids_; }

 private:
  Tape& tape_;
  const NetParams& params_;
  Trainable trainable_;
  std::map<std::string, Tape::Id> ids_;
};

namespace detail {

inline Tape::Id conv_layer(Binder& bind, const std::string& name, Tape::Id x, int stride, int pad) {
  return conv2d(bind.tape(), x, bind(name + ".w"), bind(name + ".b"), stride, pad);
}

/// Two 3x3 convolutions plus shortcut, nonlinearity after the addition.
/// The shortcut is a 1x1 projection when the shape changes.
inline Tape::Id residual_block(Binder& bind, const std::string& name, Tape::Id x, int stride, bool project) {
  Tape& t = bind.tape();
  const Tape::Id h = softplus(t, conv_layer(bind, name + ".conv1", x, stride, 1));
  const Tape::Id r = conv_layer(bind, name + ".conv2", h, 1, 1);
  const Tape::Id shortcut = project ? conv_layer(bind, name + ".proj", x, stride, 0) : x;
  return softplus(t, add(t, shortcut, r));
}

}  // namespace detail

/// Tape nodes of one branch's forward pass.
struct BranchNodes {
  Tape::Id heatmaps = -1;
  std::vector<Tape::Id> intermediates;
  std::vector<Tape::Id> distance_features;
  Tape::Id last = -1;
};

inline BranchNodes build_branch(Binder& bind, const NetConfig& c, Branch br, Tape::Id input) {
  Tape& t = bind.tape();
  const std::string p = branch_prefix(br);
  BranchNodes out;
  Tape::Id x = softplus(t, detail::conv_layer(bind, p + "stem", input, 2, 1));
  for (int b = 1; b <= c.blocks(); ++b) {
    const bool project = c.channels_after(b - 1) != c.channels_after(b) || c.downsamples(b);
    x = detail::residual_block(bind, p + "block" + std::to_string(b), x, c.downsamples(b) ? 2 : 1, project);
    if (std::find(c.supervision_taps.begin(), c.supervision_taps.end(), b) != c.supervision_taps.end()) {
      const int f = c.heatmap_grid / c.resolution_after(b);
      const std::string name = p + "tap" + std::to_string(b);
      out.intermediates.push_back(f == 1 ? detail::conv_layer(bind, name, x, 1, 0)
                                         : conv_transpose2d(t, x, bind(name + ".w"), bind(name + ".b"), f, 0));
    }
    if (std::find(c.distance_taps.begin(), c.distance_taps.end(), b) != c.distance_taps.end()) {
      out.distance_features.push_back(x);
    }
  }
  out.last = x;
  Tape::Id h = softplus(t, conv_transpose2d(t, x, bind(p + "head.deconv.w"), bind(p + "head.deconv.b"), 2, 1));
  h = softplus(t, detail::conv_layer(bind, p + "head.conv1", h, 1, 1));
  out.heatmaps = detail::conv_layer(bind, p + "head.conv2", h, 1, 0);
  return out;
}

/// Distance head over concatenated tap features; output (N, 15) in meters.
inline Tape::Id build_distance_head(Binder& bind, const std::string& head, Tape::Id features) {
  Tape& t = bind.tape();
  Tape::Id x = softplus(t, detail::conv_layer(bind, head + ".reduce", features, 1, 0));
  x = detail::residual_block(bind, head + ".block1", x, 1, false);
  x = detail::residual_block(bind, head + ".block2", x, 1, false);
  x = softplus(t, detail::conv_layer(bind, head + ".conv", x, 2, 1));
  return linear(t, x, bind(head + ".fc.w"), bind(head + ".fc.b"));
}

/// Direct camera-space regression from the full branch; (N, 45) in meters.
inline Tape::Id build_baseline_head(Binder& bind, Tape::Id last) {
  Tape& t = bind.tape();
  const Tape::Id x = softplus(t, detail::conv_layer(bind, "baseline.conv", last, 2, 1));
  return linear(t, x, bind("baseline.fc.w"), bind("baseline.fc.b"));
}

/// Grayscale network input, centered on zero. The zoom branch sees the
/// magnified central crop.
inline Tensor image_tensor(const Image& image, const NetConfig& c, Branch br) {
  if (image.width != c.input_size || image.height != c.input_size) {
    fail(ErrorCode::kConfig, "image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                 ", network expects " + std::to_string(c.input_size) + "x" +
                                 std::to_string(c.input_size));
  }
  const Image gray = to_gray(br == Branch::kZoom ? zoom_crop(image) : image);
  Tensor t({1, 1, gray.height, gray.width});
  for (std::size_t i = 0; i < gray.data.size(); ++i) t[i] = static_cast<double>(gray.data[i]) - 0.5;
  return t;
}

inline HeatmapStack to_heatmaps(const Tensor& t, int sample, Branch br, ImageSize source) {
  const int grid = t.dim(2);
  HeatmapStack s(br, grid, source);
  if (t.dim(1) != s.channels || t.dim(3) != grid) fail(ErrorCode::kShape, "heatmap tensor " + t.shape_string());
  const auto n = s.values.size();
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(sample) * n), n,
              s.values.begin());
  return s;
}

inline Tensor sample_slice(const Tensor& t, int sample) {
  std::vector<int> dims = t.dims;
  dims[0] = 1;
  Tensor out(dims);
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(sample) * out.size()),
              out.size(), out.data.begin());
  return out;
}

struct Forward2D {
  HeatmapStack heatmaps;
  std::vector<HeatmapStack> intermediates;
  /// Backbone output at each distance tap, each (1, C, r, r).
  std::vector<Tensor> features;
  /// Output of the last residual block.
  Tensor last;
};

inline Forward2D forward_2d(const NetParams& params, const NetConfig& c, const Image& image, Branch br) {
  Tape tape;
  Binder bind(tape, params, train_none());
  const Tape::Id input = tape.constant(image_tensor(image, c, br));
  const BranchNodes nodes = build_branch(bind, c, br, input);
  const ImageSize source{image.width, image.height};
  Forward2D out;
  out.heatmaps = to_heatmaps(tape.value(nodes.heatmaps), 0, br, source);
  for (Tape::Id id : nodes.intermediates) out.intermediates.push_back(to_heatmaps(tape.value(id), 0, br, source));
  for (Tape::Id id : nodes.distance_features) out.features.push_back(tape.value(id));
  out.last = tape.value(nodes.last);
  return out;
}

inline Forward2D forward_2d(const NetParams& params, const NetConfig& c, const Image& image) {
  return forward_2d(params, c, image, c.branch);
}

namespace detail {

inline std::array<double, kNumJoints> run_distance_head(const NetParams& params, const std::string& head,
                                                        const std::vector<Tensor>& features) {
  Tape tape;
  Binder bind(tape, params, train_none());
  std::vector<Tape::Id> ids;
  for (const auto& f : features) ids.push_back(tape.constant(f));
  const Tensor& m = tape.value(build_distance_head(bind, head, concat_channels(tape, ids)));
  std::array<double, kNumJoints> mm{};
  for (std::size_t j = 0; j < kNumJoints; ++j) mm[j] = 1000.0 * m[j];
  return mm;
}

inline void check_features(const NetConfig& c, const std::vector<Tensor>& f, const char* which) {
  if (f.size() != c.distance_taps.size()) {
    fail(ErrorCode::kUsage, std::string("distance module needs ") + std::to_string(c.distance_taps.size()) +
                                " " + which + "-branch feature tensors, got " + std::to_string(f.size()));
  }
}

}  // namespace detail

/// Camera-to-joint distances in millimeters from both branches' tap features.
inline std::array<double, kNumJoints> forward_distance(const NetParams& params, const NetConfig& c,
                                                       const std::vector<Tensor>& features_full,
                                                       const std::vector<Tensor>& features_zoom) {
  detail::check_features(c, features_full, "full");
  detail::check_features(c, features_zoom, "zoom");
  std::vector<Tensor> all = features_full;
  all.insert(all.end(), features_zoom.begin(), features_zoom.end());
  return detail::run_distance_head(params, "distance", all);
}

/// Distance head trained on full-branch features only.
inline std::array<double, kNumJoints> forward_distance_no_zoom(const NetParams& params, const NetConfig& c,
                                                               const std::vector<Tensor>& features_full) {
  detail::check_features(c, features_full, "full");
  return detail::run_distance_head(params, "distance_nozoom", features_full);
}

/// 15 x 3 camera-space joint coordinates in millimeters, joint-major.
inline std::array<double, 3 * kNumJoints> forward_baseline_vector(const NetParams& params, const NetConfig& c,
                                                                  const Image& image) {
  const Forward2D f = forward_2d(params, c, image, Branch::kFull);
  Tape tape;
  Binder bind(tape, params, train_none());
  const Tensor& m = tape.value(build_baseline_head(bind, tape.constant(f.last)));
  std::array<double, 3 * kNumJoints> mm{};
  for (std::size_t i = 0; i < mm.size(); ++i) mm[i] = 1000.0 * m[i];
  return mm;
}

}  // namespace egopose::nn
