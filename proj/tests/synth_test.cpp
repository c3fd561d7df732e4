// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "egopose/synth/corpus.hpp"
#include "test_support.hpp"

namespace egopose::synth {
namespace {

using test_support::scratch_dir;
using test_support::small_corpus_config;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> directory_bytes(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

TEST(Sampler, DeterministicForResetRng) {
  const SamplerConfig cfg;
  Rng a(99, 3);
  Rng b(99, 3);
  const auto p = sample_pose(a, cfg);
  const auto q = sample_pose(b, cfg);
  EXPECT_EQ(p.action, q.action);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_EQ(p.pose[j], q.pose[j]);
}

TEST(Sampler, BoneLengthsAreCanonical) {
  const SamplerConfig cfg;
  Rng rng(1);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto lengths = bone_lengths(sample_pose(rng, cfg).pose);
    for (int b = 0; b < kNumBones; ++b) worst = std::max(worst, std::abs(lengths[b] - kCanonicalBoneLengths[b]));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Sampler, JointsInFovOrFlagged) {
  const SamplerConfig cfg;
  const FisheyeCamera cam = default_calibration({256, 256});
  Rng rng(2);
  int outside = 0;
  int lower_outside = 0;
  int total = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto pose = sample_pose(rng, cfg).pose;
    const Pose2D p2 = reproject(pose, cam);
    for (int j = 0; j < kNumJoints; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      ++total;
      EXPECT_EQ(p2.in_fov[sj], cam.in_fov(pose[j]));
      if (!p2.in_fov[sj]) {
        ++outside;
        lower_outside += is_lower_body(j) ? 1 : 0;
      } else {
        EXPECT_TRUE(inside_image(p2.pixels[sj], cam.image_size()));
      }
    }
  }
  const double fraction = static_cast<double>(outside) / total;
  RecordProperty("out_of_fov_fraction", std::to_string(fraction));
  std::printf("out-of-FOV joint fraction: %.4f\n", fraction);
  // Only raised elbows and wrists leave the view; torso and legs never do.
  EXPECT_LT(fraction, 0.10);
  EXPECT_EQ(lower_outside, 0);
}

TEST(Sampler, NeckSitsBelowAndBehindTheCamera) {
  const SamplerConfig cfg;
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double d = sample_pose(rng, cfg).pose[JointId::kNeck].norm();
    EXPECT_GT(d, 80.0);
    EXPECT_LT(d, 250.0);
  }
}

TEST(Sampler, MountPerturbationWithinRange) {
  const SamplerConfig cfg;
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto m = sample_mount(rng, cfg);
    EXPECT_LT((m.rotation.transpose() * m.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(m.rotation.determinant(), 1.0, 1e-12);
    const Eigen::AngleAxisd delta(nominal_mount_rotation().transpose() * m.rotation);
    EXPECT_LE(rad_to_deg(delta.angle()), 5.0 * std::sqrt(3.0) + 1e-9);
    EXPECT_LE(((m.position - cfg.mount_position).cwiseAbs().maxCoeff()), 20.0);
  }
}

TEST(Sampler, UnknownActionIsConfigError) {
  SamplerConfig cfg;
  cfg.actions = {"juggling"};
  Rng rng(5);
  EXPECT_THROW(sample_pose(rng, cfg), Error);
}

TEST(Renderer, SphereAndCapsuleHits) {
  const auto t = intersect_sphere(Vec3(0, 0, 1), Vec3(0, 0, 500), 100);
  ASSERT_TRUE(t.has_value());
  EXPECT_NEAR(*t, 400.0, 1e-9);
  EXPECT_FALSE(intersect_sphere(Vec3(1, 0, 0), Vec3(0, 0, 500), 100).has_value());
  const Capsule cap{Vec3(-200, 0, 600), Vec3(200, 0, 600), 50, {1, 1, 1}};
  const auto hit = intersect_capsule(Vec3(0, 0, 1), cap);
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->first, 550.0, 1e-9);
  EXPECT_LT((hit->second - Vec3(0, 0, -1)).norm(), 1e-9);
}

TEST(Renderer, BodyBehindCameraLeavesBackground) {
  const FisheyeCamera cam = default_calibration({64, 64});
  Pose3D pose;
  Rng rng(6);
  for (auto& p : pose.joints) p = Vec3(rng.symmetric(100), rng.symmetric(100), -3000 - rng.uniform(0, 500));
  Image bg = procedural_background({64, 64}, 1, rng);
  const auto frame = render_frame(pose, cam, bg, 1.0, rng, 16);
  for (bool f : frame.joints2d.in_fov) EXPECT_FALSE(f);
  for (double v : frame.heatmaps_full.values) EXPECT_EQ(v, 0.0);
  const Image expected = quantize8(bg);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool in_circle = (Vec2(x + 0.5, y + 0.5) - cam.principal_point()).norm() <= cam.max_radius();
      EXPECT_EQ(frame.image.at(x, y), in_circle ? expected.at(x, y) : 0.0f);
    }
  }
}

TEST(Renderer, GammaIsPowerOfUncorrectedComposite) {
  const auto cfg = small_corpus_config();
  Rng rng(7);
  const auto sample = sample_pose(rng, cfg.sampler);
  const FisheyeCamera cam = cfg.camera();
  const Image bg = procedural_background(cam.image_size(), 1, rng);
  Rng body_rng(8);
  const auto body = build_body(sample.pose, body_rng);
  const Image linear = render_body(body, cam, bg, 1.0);
  const Image corrected = render_body(body, cam, bg, 1.4);
  for (std::size_t i = 0; i < linear.data.size(); ++i) {
    EXPECT_NEAR(corrected.data[i], std::pow(linear.data[i], 1.4), 1e-6);
  }
  Rng frame_rng(8);
  EXPECT_EQ(render_frame(sample.pose, cam, bg, 1.0, frame_rng, 16).image.data, quantize8(linear).data);
}

TEST(Renderer, EmptyBackgroundIsConfigError) {
  const FisheyeCamera cam = default_calibration({64, 64});
  try {
    render_body(BodyGeometry{}, cam, Image{}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Frame, AnnotationsMatchAnalyticOracle) {
  const auto cfg = small_corpus_config(40);
  for (const auto& f : test_support::make_frames(cfg)) {
    for (int j = 0; j < kNumJoints; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      EXPECT_NEAR(f.distances[sj], f.joints3d[j].norm(), 1e-9);
      if (!f.joints2d.in_fov[sj]) continue;
      // The 2D label is where the lens sends the joint's ray.
      const Vec3 ray = f.camera.backproject(f.joints2d.pixels[sj]);
      EXPECT_LT(angle_between(ray, f.joints3d[j]), 1e-9);
      EXPECT_LT((f.camera.project(f.joints3d[j]) - f.joints2d.pixels[sj]).norm(), 1e-6);
    }
    EXPECT_TRUE(validate_frame(f).empty());
  }
}

TEST(Frame, RecordedMountExplainsThePose) {
  const auto cfg = small_corpus_config(20);
  for (const auto& f : test_support::make_frames(cfg)) {
    // The neck is the origin of the head frame.
    EXPECT_LT((f.mount.rotation * f.joints3d[JointId::kNeck] + f.mount.position).norm(), 1e-9);
  }
}

TEST(Frame, ValidatorCatchesTampering) {
  auto f = test_support::make_frames(small_corpus_config(1))[0];
  auto bad = f;
  bad.distances[3] += 1e-6;
  EXPECT_FALSE(validate_frame(bad).empty());
  bad = f;
  bad.joints2d.pixels[0].x() += 1e-5;
  EXPECT_FALSE(validate_frame(bad).empty());
  bad = f;
  bad.heatmaps_zoom.values[10] = std::nextafter(bad.heatmaps_zoom.values[10], 1.0);
  EXPECT_FALSE(validate_frame(bad).empty());
}

TEST(Corpus, ConfigJsonRoundTrip) {
  auto cfg = small_corpus_config(5, 11);
  cfg.rgb = true;
  cfg.gamma_min = 0.8;
  const auto back = corpus_config_from_json(Json::parse(corpus_config_to_json(cfg).dump()));
  EXPECT_EQ(corpus_config_to_json(back), corpus_config_to_json(cfg));
  Json j = corpus_config_to_json(cfg);
  j["frames"] = 3;
  EXPECT_THROW(corpus_config_from_json(j), Error);
}

TEST(Corpus, ZeroFramesWritesIndexOnly) {
  const auto dir = scratch_dir("synth_empty");
  generate_corpus(small_corpus_config(0), dir);
  const auto files = directory_bytes(dir);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_TRUE(files.contains("index.json"));
  EXPECT_TRUE(load_corpus(dir).frames.empty());
}

TEST(Corpus, SameSeedIsByteIdentical) {
  const auto a = scratch_dir("synth_a");
  const auto b = scratch_dir("synth_b");
  auto cfg = small_corpus_config(6, 3);
  cfg.rgb = true;
  generate_corpus(cfg, a, 1);
  generate_corpus(cfg, b, 3);
  const auto fa = directory_bytes(a);
  EXPECT_EQ(fa.size(), 1u + 3u * 6u);
  EXPECT_EQ(fa, directory_bytes(b));
  const auto c = scratch_dir("synth_c");
  cfg.seed = 4;
  generate_corpus(cfg, c, 1);
  EXPECT_NE(fa.at("frame_000000.png"), directory_bytes(c).at("frame_000000.png"));
}

TEST(Corpus, HundredFramesPassValidatorAfterReload) {
  const auto dir = scratch_dir("synth_hundred");
  const auto cfg = small_corpus_config(100, 5);
  generate_corpus(cfg, dir, 2);
  const auto corpus = load_corpus(dir);
  ASSERT_EQ(corpus.frames.size(), 100u);
  for (const auto& f : corpus.frames) {
    const auto issues = validate_frame(f);
    EXPECT_TRUE(issues.empty()) << f.index << ": " << (issues.empty() ? "" : issues.front());
  }
  // Reloaded frames are the generated frames.
  const auto direct = generate_frame(cfg, {}, 17);
  EXPECT_EQ(corpus.frames[17].image.data, direct.image.data);
  EXPECT_EQ(corpus.frames[17].heatmaps_full.values, direct.heatmaps_full.values);
  EXPECT_EQ(corpus.frames[17].action, direct.action);
  EXPECT_EQ(corpus.config().seed, 5u);
}

TEST(Corpus, MissingDirectoryIsIoError) {
  try {
    load_corpus("/nonexistent/egopose/corpus");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
    EXPECT_NE(std::string(e.what()).find("index.json"), std::string::npos);
  }
}

}  // namespace
}  // namespace egopose::synth
