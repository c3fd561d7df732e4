// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "egopose/eval.hpp"
#include "egopose/nn/predict.hpp"
#include "egopose/nn/train.hpp"
#include "egopose/overlay.hpp"
#include "egopose/synth/corpus.hpp"

namespace egopose::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Settings shared by every subcommand.
struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string profile = "test";
  bool verbose = false;

  int thread_count() const {
    if (threads > 0) return threads;
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }
};

inline void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) fail(ErrorCode::kIo, std::string(what) + " '" + p.string() + "' does not exist");
}

inline void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) fail(ErrorCode::kIo, std::string(what) + " '" + p.string() + "' does not exist");
}

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Correspondence file for `calibrate`: the camera frame plus pixel/ray pairs.
inline FisheyeCamera calibrate_from_file(const fs::path& path, int degree, double* max_error_px) {
  const Json j = read_json_file(path);
  constexpr std::string_view ctx = "correspondence file";
  check_keys(j, {"principal_point", "image_size", "max_radius", "fov_half_angle_deg", "correspondences"}, ctx);
  const auto pp = require<std::vector<double>>(j, "principal_point", ctx);
  const auto size = require<std::vector<int>>(j, "image_size", ctx);
  if (pp.size() != 2 || size.size() != 2) fail(ErrorCode::kConfig, "principal_point and image_size need 2 entries");
  const CameraFrame frame{Vec2(pp[0], pp[1]), ImageSize{size[0], size[1]}, require<double>(j, "max_radius", ctx),
                          deg_to_rad(require<double>(j, "fov_half_angle_deg", ctx))};
  std::vector<Correspondence> pairs;
  for (const auto& c : require<Json>(j, "correspondences", ctx)) {
    check_keys(c, {"pixel", "direction"}, "correspondence");
    const auto px = require<std::vector<double>>(c, "pixel", ctx);
    const auto d = require<std::vector<double>>(c, "direction", ctx);
    if (px.size() != 2 || d.size() != 3) fail(ErrorCode::kConfig, "correspondence needs pixel[2] and direction[3]");
    pairs.push_back({Vec2(px[0], px[1]), Vec3(d[0], d[1], d[2])});
  }
  const FisheyeCamera cam = fit_coeffs(pairs, degree, frame);
  double worst = 0.0;
  for (const auto& c : pairs) worst = std::max(worst, (cam.project(c.direction) - c.pixel).norm());
  if (max_error_px != nullptr) *max_error_px = worst;
  return cam;
}

inline BoneLengths universal_lengths(const synth::Corpus& corpus, const std::string& path) {
  if (!path.empty()) {
    require_file(path, "universal skeleton");
    return bone_lengths_from_json(read_json_file(path));
  }
  return corpus.config().sampler.bone_lengths;
}

inline Image load_rgb_or_gray(const fs::path& path) {
  require_file(path, "image");
  return read_png(path);
}

/// Parses argv and runs one subcommand. Errors become a JSON line on `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"egopose: egocentric fisheye pose estimation toolkit", "egopose"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Overrides the seed of every config");
  app.add_option("--threads", g.threads, "Worker threads (default: logical cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--profile", g.profile, "Network profile when no net config is given")
      ->check(CLI::IsMember({"test", "paper"}))
      ->capture_default_str();
  app.add_flag("--verbose", g.verbose, "Progress output on stderr");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Fit a lens polynomial or write the default calibration");
  std::string cal_corr, cal_out;
  int cal_degree = 4;
  bool cal_default = false;
  int cal_size = kDefaultCalibrationWidth;
  cal->add_option("--correspondences", cal_corr, "JSON file of pixel/direction pairs");
  cal->add_option("--degree", cal_degree, "Polynomial degree")->capture_default_str()->check(CLI::Range(1, 12));
  cal->add_flag("--default", cal_default, "Write the built-in synthetic calibration");
  cal->add_option("--size", cal_size, "Image width/height for --default")->capture_default_str()->check(
      CLI::PositiveNumber);
  cal->add_option("--out", cal_out, "Output calibration JSON")->required();

  // synth-gen
  auto* syn = app.add_subcommand("synth-gen", "Generate a synthetic corpus");
  std::string syn_cfg, syn_out;
  int syn_frames = -1;
  bool syn_validate = false;
  syn->add_option("--config", syn_cfg, "Corpus config JSON")->required();
  syn->add_option("--out", syn_out, "Output directory")->required();
  syn->add_option("--frames", syn_frames, "Overrides frame_count")->check(CLI::NonNegativeNumber);
  syn->add_flag("--validate", syn_validate, "Re-check every frame after writing");

  // train
  auto* trn = app.add_subcommand("train", "Train the 2D module and the distance module");
  std::string trn_corpus, trn_net, trn_train, trn_out, trn_log, trn_init;
  trn->add_option("--corpus", trn_corpus, "Corpus directory")->required();
  trn->add_option("--net-config", trn_net, "Network config JSON (default: --profile)");
  trn->add_option("--train-config", trn_train, "Training config JSON (default: built-in)");
  trn->add_option("--out", trn_out, "Output checkpoint")->required();
  trn->add_option("--log", trn_log, "Loss log CSV (default: <out>.log.csv)");
  trn->add_option("--init", trn_init, "Start from this checkpoint instead of random weights");

  // infer
  auto* inf = app.add_subcommand("infer", "Estimate the 3D pose in one image");
  std::string inf_image, inf_ckpt, inf_calib, inf_out, inf_variant = "full";
  inf->add_option("--image", inf_image, "Input PNG")->required();
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
  inf->add_option("--calib", inf_calib, "Calibration JSON")->required();
  inf->add_option("--out", inf_out, "Output pose JSON")->required();
  inf->add_option("--variant", inf_variant, "full, no-zoom or no-averaging")
      ->check(CLI::IsMember({"full", "no-zoom", "no-averaging"}))
      ->capture_default_str();

  // overlay
  auto* ovl = app.add_subcommand("overlay", "Draw a pose file over its image");
  std::string ovl_pose, ovl_image, ovl_out;
  ovl->add_option("--pose", ovl_pose, "Pose JSON")->required();
  ovl->add_option("--image", ovl_image, "Input PNG")->required();
  ovl->add_option("--out", ovl_out, "Output PNG")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate variants on a corpus");
  std::string evl_corpus, evl_ckpt, evl_out, evl_universal, evl_table;
  std::vector<std::string> evl_variants;
  evl->add_option("--corpus", evl_corpus, "Corpus directory")->required();
  evl->add_option("--ckpt", evl_ckpt, "Checkpoint (not needed for oracle)");
  evl->add_option("--variant", evl_variants, "full, no-zoom, no-averaging, baseline-vector or oracle (repeatable)")
      ->required()
      ->check(CLI::IsMember({"full", "no-zoom", "no-averaging", "baseline-vector", "oracle"}));
  evl->add_option("--out", evl_out, "Report JSON")->required();
  evl->add_option("--universal", evl_universal, "Universal skeleton JSON (default: corpus canonical body)");
  evl->add_option("--table", evl_table, "Also write the plain-text table here");

  auto error_line = [&](std::string_view code, const std::string& message) {
    err << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    return kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;
  auto log = [&](const std::string& msg) {
    if (g.verbose) err << msg << "\n";
  };

  try {
    if (cal->parsed()) {
      if (cal_default == !cal_corr.empty()) {
        fail(ErrorCode::kUsage, "calibrate needs exactly one of --default or --correspondences");
      }
      FisheyeCamera cam = default_calibration({cal_size, cal_size});
      double worst = 0.0;
      if (!cal_default) {
        require_file(cal_corr, "correspondence file");
        cam = calibrate_from_file(cal_corr, cal_degree, &worst);
      }
      ensure_parent(cal_out);
      write_json_file(cal_out, camera_to_json(cam));
      out << Json{{"calibration", cal_out}, {"max_reprojection_error_px", worst}}.dump() << "\n";
    } else if (syn->parsed()) {
      require_file(syn_cfg, "config file");
      synth::CorpusConfig cfg = synth::corpus_config_from_json(read_json_file(syn_cfg), fs::path(syn_cfg).parent_path());
      if (g.seed) cfg.seed = *g.seed;
      if (syn_frames >= 0) cfg.frame_count = syn_frames;
      const auto t0 = std::chrono::steady_clock::now();
      synth::generate_corpus(cfg, syn_out, g.thread_count());
      int issues = 0;
      if (syn_validate) {
        const auto corpus = synth::load_corpus(syn_out);
        for (const auto& f : corpus.frames) {
          for (const auto& issue : synth::validate_frame(f)) {
            ++issues;
            err << synth::frame_stem(f.index) << ": " << issue << "\n";
          }
        }
        if (issues > 0) fail(ErrorCode::kDomain, std::to_string(issues) + " validation issues in the corpus");
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << Json{{"corpus", syn_out}, {"frames", cfg.frame_count}, {"seed", cfg.seed}, {"seconds", secs}}.dump()
          << "\n";
    } else if (trn->parsed()) {
      require_dir(trn_corpus, "corpus");
      nn::NetConfig nc = nn::NetConfig::for_profile(g.profile);
      if (!trn_net.empty()) {
        require_file(trn_net, "net config");
        nc = nn::net_config_from_json(read_json_file(trn_net));
      }
      nn::TrainConfig tc;
      if (!trn_train.empty()) {
        require_file(trn_train, "train config");
        tc = nn::train_config_from_json(read_json_file(trn_train));
      }
      if (g.seed) tc.seed = *g.seed;
      std::optional<nn::NetParams> init;
      if (!trn_init.empty()) {
        require_file(trn_init, "initial checkpoint");
        auto ck = nn::load_checkpoint(trn_init);
        if (net_config_to_json(ck.config) != net_config_to_json(nc)) {
          fail(ErrorCode::kConfig, "initial checkpoint was trained with a different net config");
        }
        init = std::move(ck.params);
      }
      const auto corpus = synth::load_corpus(trn_corpus);
      std::vector<nn::Sample> samples;
      for (const auto& f : corpus.frames) samples.push_back(nn::make_sample(f, nc));
      log("training on " + std::to_string(samples.size()) + " frames");
      const auto result = nn::train(tc, nc, samples, std::move(init), [&](const nn::LogRow& r) {
        if (g.verbose && (r.iteration == 1 || r.iteration % 50 == 0)) {
          err << "iter " << r.iteration << " [" << r.stage << "] loss " << r.loss.total() << "\n";
        }
      });
      ensure_parent(trn_out);
      nn::save_checkpoint(trn_out, result.params, nc);
      const fs::path log_path = trn_log.empty() ? fs::path(trn_out + ".log.csv") : fs::path(trn_log);
      ensure_parent(log_path);
      write_text_file(log_path, nn::log_to_csv(result.log));
      if (result.diverged) fail(ErrorCode::kTrainingDiverged, result.message + " (last good weights saved)");
      out << Json{{"checkpoint", trn_out}, {"log", log_path.string()}, {"iterations", result.log.size()}}.dump()
          << "\n";
    } else if (inf->parsed()) {
      require_file(inf_ckpt, "checkpoint");
      require_file(inf_calib, "calibration");
      const Image image = load_rgb_or_gray(inf_image);
      auto ck = nn::load_checkpoint(inf_ckpt);
      const nn::Model model{ck.config, std::move(ck.params)};
      FisheyeCamera cam = load_calibration(inf_calib);
      const ImageSize original{image.width, image.height};
      if (!(cam.image_size() == original)) cam = cam.resized(original);
      const int n = model.config.input_size;
      const Image net_image = resize(image, n, n);
      const auto result = nn::infer(model, net_image, cam.resized({n, n}), nn::variant_from_name(inf_variant));
      Pose2D px = result.lifted.detections;
      const double sx = static_cast<double>(original.width) / n;
      const double sy = static_cast<double>(original.height) / n;
      for (auto& p : px.pixels) p = Vec2(p.x() * sx, p.y() * sy);
      for (std::size_t j = 0; j < kNumJoints; ++j) px.in_fov[j] = result.lifted.ok(static_cast<int>(j));
      const auto status = result.lifted.status_names();
      Json j = pose_to_json(result.lifted.pose, px, &status);
      j["distances_mm"] = result.distances_mm;
      ensure_parent(inf_out);
      write_json_file(inf_out, j);
      out << Json{{"pose", inf_out}}.dump() << "\n";
    } else if (ovl->parsed()) {
      require_file(ovl_pose, "pose file");
      const PoseFile pose = pose_from_json(read_json_file(ovl_pose));
      const Image image = load_rgb_or_gray(ovl_image);
      ensure_parent(ovl_out);
      write_png(ovl_out, draw_overlay(image, pose.pose2d));
      out << Json{{"overlay", ovl_out}}.dump() << "\n";
    } else if (evl->parsed()) {
      require_dir(evl_corpus, "corpus");
      std::shared_ptr<const nn::Model> model;
      if (!evl_ckpt.empty()) {
        require_file(evl_ckpt, "checkpoint");
        auto ck = nn::load_checkpoint(evl_ckpt);
        model = std::make_shared<const nn::Model>(nn::Model{ck.config, std::move(ck.params)});
      }
      const auto corpus = synth::load_corpus(evl_corpus);
      const BoneLengths universal = universal_lengths(corpus, evl_universal);
      std::vector<EvalReport> reports;
      for (const auto& name : evl_variants) {
        log("evaluating " + name);
        auto report = evaluate_variant(nn::make_predictor(nn::variant_from_name(name), model), corpus.frames,
                                       universal, name);
        if (!evl_universal.empty()) report.skeleton_source = evl_universal;
        reports.push_back(std::move(report));
      }
      Json j = Json::array();
      for (const auto& r : reports) j.push_back(report_to_json(r));
      const std::string table = render_table(reports);
      ensure_parent(evl_out);
      write_json_file(evl_out, Json{{"corpus", evl_corpus}, {"reports", j}, {"table", table}});
      if (!evl_table.empty()) {
        ensure_parent(evl_table);
        write_text_file(evl_table, table);
      }
      out << table;
    }
  } catch (const Error& e) {
    error_line(error_code_name(e.code()), e.what());
    return e.code() == ErrorCode::kUsage ? kExitUsage : kExitDomain;
  } catch (const fs::filesystem_error& e) {
    error_line("io", e.what());
    return kExitDomain;
  } catch (const nlohmann::json::exception& e) {
    error_line("config", e.what());
    return kExitDomain;
  }
  return kExitOk;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"egopose"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace egopose::cli
