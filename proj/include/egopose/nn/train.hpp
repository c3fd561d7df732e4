// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "egopose/nn/network.hpp"
#include "egopose/synth/corpus.hpp"

namespace egopose::nn {

/// Loss terms, each already averaged over the batch.
struct LossBreakdown {
  double final_heatmaps = 0.0;
  double intermediate = 0.0;
  double distance = 0.0;
  double vector = 0.0;

  double total() const { return final_heatmaps + intermediate + distance + vector; }
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kShape, "loss operands differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

/// Single-frame loss against ground truth: squared error of the final
/// heatmaps, of every intermediate stack, and of the distances in meters.
/// The branch of `pred` selects the ground-truth stack.
inline LossBreakdown loss(const HeatmapStack& pred, const std::vector<HeatmapStack>& intermediates,
                          const std::optional<std::array<double, kNumJoints>>& distances_mm,
                          const synth::CorpusFrame& gt) {
  const HeatmapStack& target = pred.branch == Branch::kFull ? gt.heatmaps_full : gt.heatmaps_zoom;
  LossBreakdown l;
  l.final_heatmaps = detail::squared_distance(pred.values, target.values);
  for (const auto& s : intermediates) l.intermediate += detail::squared_distance(s.values, target.values);
  if (distances_mm) {
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const double r = ((*distances_mm)[j] - gt.distances[j]) / 1000.0;
      l.distance += r * r;
    }
  }
  return l;
}

/// One frame prepared as network inputs and targets.
struct Sample {
  Tensor full_input;
  Tensor zoom_input;
  Tensor full_target;
  Tensor zoom_target;
  std::array<double, kNumJoints> distances_m{};
  std::array<double, 3 * kNumJoints> joints_m{};
};

inline Sample make_sample(const synth::CorpusFrame& f, const NetConfig& c) {
  if (f.heatmaps_full.grid != c.heatmap_grid || f.heatmaps_zoom.grid != c.heatmap_grid) {
    fail(ErrorCode::kConfig, "corpus heatmap grid " + std::to_string(f.heatmaps_full.grid) +
                                 " differs from network grid " + std::to_string(c.heatmap_grid));
  }
  Sample s;
  s.full_input = image_tensor(f.image, c, Branch::kFull);
  s.zoom_input = image_tensor(f.image, c, Branch::kZoom);
  const int g = c.heatmap_grid;
  s.full_target = Tensor({1, kNumJoints, g, g});
  s.full_target.data = f.heatmaps_full.values;
  s.zoom_target = Tensor({1, kNumLowerBodyJoints, g, g});
  s.zoom_target.data = f.heatmaps_zoom.values;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    s.distances_m[j] = f.distances[j] / 1000.0;
    for (std::size_t k = 0; k < 3; ++k) s.joints_m[3 * j + k] = f.joints3d.joints[j][static_cast<Eigen::Index>(k)] / 1000.0;
  }
  return s;
}

/// What a training step optimizes.
enum class Objective { kFull2D, kZoom2D, kDistance, kDistanceNoZoom, kBaselineVector };

inline std::string objective_name(Objective o) {
  switch (o) {
    case Objective::kFull2D: return "full";
    case Objective::kZoom2D: return "zoom";
    case Objective::kDistance: return "distance";
    case Objective::kDistanceNoZoom: return "distance_nozoom";
    case Objective::kBaselineVector: return "baseline";
  }
  return "unknown";
}

/// Parameters a stage updates; everything else is frozen.
inline Trainable stage_params(Objective o) { return train_prefix(objective_name(o) + "."); }

struct GradResult {
  LossBreakdown loss;
  /// One entry per parameter, zero where no data path exists.
  std::map<std::string, Tensor> grads;
};

namespace detail {

inline Tensor stack(const std::vector<const Sample*>& batch, Tensor Sample::*field) {
  const Tensor& first = batch.front()->*field;
  std::vector<int> dims = first.dims;
  dims[0] = static_cast<int>(batch.size());
  Tensor out(dims);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy((batch[i]->*field).data.begin(), (batch[i]->*field).data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * first.size()));
  }
  return out;
}

template <std::size_t N>
Tensor stack_values(const std::vector<const Sample*>& batch, std::array<double, N> Sample::*field) {
  Tensor out({static_cast<int>(batch.size()), static_cast<int>(N)});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy((batch[i]->*field).begin(), (batch[i]->*field).end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * N));
  }
  return out;
}

}  // namespace detail

namespace detail {

struct ObjectiveGraph {
  std::vector<Tape::Id> terms;
  LossBreakdown loss;
};

/// Records the batch-mean loss terms of an objective on `bind`'s tape.
inline ObjectiveGraph build_objective(Binder& bind, const NetConfig& c, const std::vector<const Sample*>& batch,
                                      Objective objective) {
  if (batch.empty()) fail(ErrorCode::kUsage, "empty batch");
  Tape& tape = bind.tape();
  const double w = 1.0 / static_cast<double>(batch.size());
  ObjectiveGraph out;
  auto term = [&](Tape::Id id, double& slot) {
    slot += tape.value(id)[0];
    out.terms.push_back(id);
  };
  auto backbone = [&](Branch br) {
    const Tape::Id input = tape.constant(stack(batch, br == Branch::kFull ? &Sample::full_input : &Sample::zoom_input));
    return build_branch(bind, c, br, input);
  };
  auto two_d = [&](Branch br) {
    const Tensor target = stack(batch, br == Branch::kFull ? &Sample::full_target : &Sample::zoom_target);
    const BranchNodes n = backbone(br);
    term(squared_error(tape, n.heatmaps, target, w), out.loss.final_heatmaps);
    for (Tape::Id id : n.intermediates) term(squared_error(tape, id, target, w), out.loss.intermediate);
  };
  switch (objective) {
    case Objective::kFull2D: two_d(Branch::kFull); break;
    case Objective::kZoom2D: two_d(Branch::kZoom); break;
    case Objective::kDistance:
    case Objective::kDistanceNoZoom: {
      std::vector<Tape::Id> features = backbone(Branch::kFull).distance_features;
      if (objective == Objective::kDistance) {
        const auto zoom = backbone(Branch::kZoom).distance_features;
        features.insert(features.end(), zoom.begin(), zoom.end());
      }
      const Tape::Id pred = build_distance_head(bind, objective_name(objective), concat_channels(tape, features));
      term(squared_error(tape, pred, stack_values(batch, &Sample::distances_m), w), out.loss.distance);
      break;
    }
    case Objective::kBaselineVector: {
      const Tape::Id pred = build_baseline_head(bind, backbone(Branch::kFull).last);
      term(squared_error(tape, pred, stack_values(batch, &Sample::joints_m), w), out.loss.vector);
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Mean batch loss of an objective without gradients.
inline LossBreakdown objective_loss(const NetParams& params, const NetConfig& c,
                                    const std::vector<const Sample*>& batch, Objective objective) {
  Tape tape;
  Binder bind(tape, params, train_none());
  return detail::build_objective(bind, c, batch, objective).loss;
}

/// Mean batch loss of an objective and its exact gradient with respect to
/// every parameter. Frozen parameters get zero gradients.
inline GradResult backward(const NetParams& params, const NetConfig& c, const std::vector<const Sample*>& batch,
                           Objective objective, const Trainable& trainable = train_all()) {
  Tape tape;
  Binder bind(tape, params, trainable);
  const auto graph = detail::build_objective(bind, c, batch, objective);
  const Tape::Id total = sum_scalars(tape, graph.terms);
  if (!std::isfinite(tape.value(total)[0])) {
    fail(ErrorCode::kTrainingDiverged, "non-finite loss in objective " + objective_name(objective));
  }
  tape.backward(total);
  GradResult out;
  out.loss = graph.loss;
  for (const auto& [name, t] : params.tensors) {
    const auto it = bind.bound().find(name);
    if (it != bind.bound().end() && tape.requires_grad(it->second) && tape.has_grad(it->second)) {
      out.grads.emplace(name, tape.grad(it->second));
    } else {
      out.grads.emplace(name, Tensor(t.dims));
    }
  }
  return out;
}

/// Optimizer and schedule settings.
struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1.0;
  double rho = 0.9;
  double epsilon = 1e-6;
  /// Blocks 1..low_lr_blocks of both branches (and their stems) train at
  /// learning_rate * low_lr_multiplier.
  int low_lr_blocks = 0;
  double low_lr_multiplier = 0.001;
  /// Extra multipliers by parameter-name prefix.
  std::map<std::string, double> lr_multipliers;
  /// Step decay within each stage: the rate is multiplied by lr_decay after
  /// every lr_step iterations (0 disables).
  int lr_step = 0;
  double lr_decay = 0.5;
  int iterations_full = 200;
  int iterations_zoom = 200;
  int iterations_distance = 200;
  int iterations_distance_no_zoom = 0;
  int iterations_baseline = 0;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::kConfig, "train config: " + m); };
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !(low_lr_multiplier > 0.0)) bad("rates must be > 0");
    if (!(rho > 0.0 && rho < 1.0)) bad("rho must lie in (0, 1)");
    if (!(epsilon > 0.0)) bad("epsilon must be > 0");
    if (low_lr_blocks < 0) bad("low_lr_blocks must be >= 0");
    if (lr_step < 0) bad("lr_step must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) bad("lr_decay must lie in (0, 1]");
    for (const auto& [prefix, m] : lr_multipliers) {
      if (!(m >= 0.0) || !std::isfinite(m)) bad("multiplier for '" + prefix + "' must be finite and >= 0");
    }
    for (int n : {iterations_full, iterations_zoom, iterations_distance, iterations_distance_no_zoom,
                  iterations_baseline}) {
      if (n < 0) bad("iteration counts must be >= 0");
    }
  }

  /// Effective multiplier of a parameter relative to learning_rate.
  double multiplier(const std::string& name) const {
    double m = 1.0;
    for (const char* branch : {"full.", "zoom."}) {
      if (name.rfind(branch, 0) != 0) continue;
      const std::string rest = name.substr(std::string(branch).size());
      if (low_lr_blocks > 0 && rest.rfind("stem.", 0) == 0) m *= low_lr_multiplier;
      for (int b = 1; b <= low_lr_blocks; ++b) {
        if (rest.rfind("block" + std::to_string(b) + ".", 0) == 0) m *= low_lr_multiplier;
      }
    }
    for (const auto& [prefix, factor] : lr_multipliers) {
      if (name.rfind(prefix, 0) == 0) m *= factor;
    }
    return m;
  }
};

inline Json train_config_to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"rho", t.rho},
          {"epsilon", t.epsilon},
          {"low_lr_blocks", t.low_lr_blocks},
          {"low_lr_multiplier", t.low_lr_multiplier},
          {"lr_multipliers", t.lr_multipliers},
          {"lr_step", t.lr_step},
          {"lr_decay", t.lr_decay},
          {"iterations_full", t.iterations_full},
          {"iterations_zoom", t.iterations_zoom},
          {"iterations_distance", t.iterations_distance},
          {"iterations_distance_no_zoom", t.iterations_distance_no_zoom},
          {"iterations_baseline", t.iterations_baseline},
          {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  check_keys(j,
             {"batch_size", "learning_rate", "rho", "epsilon", "low_lr_blocks", "low_lr_multiplier",
              "lr_multipliers", "lr_step", "lr_decay", "iterations_full", "iterations_zoom", "iterations_distance",
              "iterations_distance_no_zoom", "iterations_baseline", "seed"},
             "train config");
  TrainConfig t;
  try {
    t.batch_size = j.value("batch_size", t.batch_size);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.rho = j.value("rho", t.rho);
    t.epsilon = j.value("epsilon", t.epsilon);
    t.low_lr_blocks = j.value("low_lr_blocks", t.low_lr_blocks);
    t.low_lr_multiplier = j.value("low_lr_multiplier", t.low_lr_multiplier);
    t.lr_multipliers = j.value("lr_multipliers", t.lr_multipliers);
    t.lr_step = j.value("lr_step", t.lr_step);
    t.lr_decay = j.value("lr_decay", t.lr_decay);
    t.iterations_full = j.value("iterations_full", t.iterations_full);
    t.iterations_zoom = j.value("iterations_zoom", t.iterations_zoom);
    t.iterations_distance = j.value("iterations_distance", t.iterations_distance);
    t.iterations_distance_no_zoom = j.value("iterations_distance_no_zoom", t.iterations_distance_no_zoom);
    t.iterations_baseline = j.value("iterations_baseline", t.iterations_baseline);
    t.seed = j.value("seed", t.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("train config: ") + e.what());
  }
  t.validate();
  return t;
}

/// Running averages of squared gradients and squared updates.
struct AdaDeltaState {
  std::map<std::string, Tensor> grad_sq;
  std::map<std::string, Tensor> update_sq;
};

/// One AdaDelta step on every parameter that has a gradient:
///   g2 <- rho g2 + (1 - rho) g^2
///   dx  = sqrt(u2 + eps) / sqrt(g2 + eps) * g
///   u2 <- rho u2 + (1 - rho) dx^2
///   x  <- x - lr * multiplier * dx
/// The update history holds the unscaled dx.
inline void adadelta_step(AdaDeltaState& state, NetParams& params, const std::map<std::string, Tensor>& grads,
                          const TrainConfig& tc) {
  for (const auto& [name, g] : grads) {
    Tensor& x = params.at(name);
    require_shape(g, x.dims, "gradient of " + name);
    auto [gs, fresh_g] = state.grad_sq.try_emplace(name, Tensor(x.dims));
    auto [us, fresh_u] = state.update_sq.try_emplace(name, Tensor(x.dims));
    Tensor& g2 = gs->second;
    Tensor& u2 = us->second;
    require_shape(g2, x.dims, "optimizer state of " + name);
    const double step = tc.learning_rate * tc.multiplier(name);
    for (std::size_t i = 0; i < x.size(); ++i) {
      g2[i] = tc.rho * g2[i] + (1.0 - tc.rho) * g[i] * g[i];
      const double dx = std::sqrt(u2[i] + tc.epsilon) / std::sqrt(g2[i] + tc.epsilon) * g[i];
      u2[i] = tc.rho * u2[i] + (1.0 - tc.rho) * dx * dx;
      x[i] -= step * dx;
    }
  }
}

struct LogRow {
  int iteration = 0;
  std::string stage;
  LossBreakdown loss;
};

inline std::string log_to_csv(const std::vector<LogRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,stage,total,final,intermediate,distance,vector\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.stage << ',' << r.loss.total() << ',' << r.loss.final_heatmaps << ','
        << r.loss.intermediate << ',' << r.loss.distance << ',' << r.loss.vector << '\n';
  }
  return out.str();
}

struct TrainResult {
  NetParams params;
  std::vector<LogRow> log;
  bool diverged = false;
  std::string message;
};

/// Staged schedule: full branch, zoom branch, then the distance head with
/// the 2D module frozen; the optional no-zoom distance head and the
/// direct-regression baseline head also train on frozen features.
inline std::vector<std::pair<Objective, int>> stage_plan(const TrainConfig& tc) {
  return {{Objective::kFull2D, tc.iterations_full},
          {Objective::kZoom2D, tc.iterations_zoom},
          {Objective::kDistance, tc.iterations_distance},
          {Objective::kDistanceNoZoom, tc.iterations_distance_no_zoom},
          {Objective::kBaselineVector, tc.iterations_baseline}};
}

using ProgressFn = std::function<void(const LogRow&)>;

inline TrainResult train(const TrainConfig& tc, const NetConfig& nc, const std::vector<Sample>& samples,
                         std::optional<NetParams> initial = std::nullopt, const ProgressFn& progress = {}) {
  tc.validate();
  nc.validate();
  if (samples.empty()) fail(ErrorCode::kConfig, "training corpus is empty");
  TrainResult result;
  result.params = initial ? std::move(*initial) : init_params(nc, tc.seed);
  check_params(result.params, nc);
  int iteration = 0;
  std::uint64_t stage_index = 0;
  for (const auto& [objective, iterations] : stage_plan(tc)) {
    ++stage_index;
    if (iterations == 0) continue;
    Rng rng(tc.seed, stage_index);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    AdaDeltaState state;
    const Trainable trainable = stage_params(objective);
    for (int it = 0; it < iterations; ++it) {
      std::vector<const Sample*> batch;
      while (static_cast<int>(batch.size()) < tc.batch_size) {
        if (cursor == order.size()) {
          for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
          cursor = 0;
        }
        batch.push_back(&samples[order[cursor++]]);
      }
      GradResult g;
      try {
        g = backward(result.params, nc, batch, objective, trainable);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kTrainingDiverged) throw;
        result.diverged = true;
        result.message = e.what();
        return result;
      }
      ++iteration;
      result.log.push_back({iteration, objective_name(objective), g.loss});
      if (progress) progress(result.log.back());
      std::erase_if(g.grads, [&](const auto& kv) { return !trainable(kv.first); });
      NetParams next = result.params;
      TrainConfig scheduled = tc;
      if (tc.lr_step > 0) scheduled.learning_rate *= std::pow(tc.lr_decay, it / tc.lr_step);
      adadelta_step(state, next, g.grads, scheduled);
      bool finite = true;
      for (const auto& [name, _] : g.grads) {
        for (double v : next.at(name).data) finite = finite && std::isfinite(v);
      }
      if (!finite) {
        result.diverged = true;
        result.message = "non-finite parameters after iteration " + std::to_string(iteration);
        return result;
      }
      result.params = std::move(next);
    }
  }
  return result;
}

inline constexpr std::string_view kCheckpointFormat = "egopose-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline Json checkpoint_to_json(const NetParams& p, const NetConfig& c) {
  Json tensors = Json::object();
  for (const auto& [name, t] : p.tensors) tensors[name] = {{"shape", t.dims}, {"values", t.data}};
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"net_config", net_config_to_json(c)},
          {"tensors", tensors}};
}

struct Checkpoint {
  NetConfig config;
  NetParams params;
};

inline Checkpoint checkpoint_from_json(const Json& j) {
  constexpr std::string_view ctx = "checkpoint";
  check_keys(j, {"format", "version", "net_config", "tensors"}, ctx);
  if (require<std::string>(j, "format", ctx) != kCheckpointFormat) {
    fail(ErrorCode::kConfig, "checkpoint: unexpected format tag");
  }
  if (require<int>(j, "version", ctx) != kCheckpointVersion) {
    fail(ErrorCode::kConfig, "checkpoint: unsupported version");
  }
  Checkpoint ck;
  ck.config = net_config_from_json(require<Json>(j, "net_config", ctx));
  const Json tensors = require<Json>(j, "tensors", ctx);
  for (const auto& [name, entry] : tensors.items()) {
    check_keys(entry, {"shape", "values"}, "checkpoint tensor");
    Tensor t(require<std::vector<int>>(entry, "shape", ctx));
    const auto values = require<std::vector<double>>(entry, "values", ctx);
    if (values.size() != t.size()) fail(ErrorCode::kConfig, "checkpoint tensor '" + name + "' has wrong length");
    t.data = values;
    ck.params.tensors.emplace(name, std::move(t));
  }
  check_params(ck.params, ck.config);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const NetParams& p, const NetConfig& c) {
  write_text_file(path, checkpoint_to_json(p, c).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace egopose::nn
