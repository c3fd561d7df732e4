// Copyright 2026 The egopose Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "egopose/nn/train.hpp"
#include "test_support.hpp"

namespace egopose::nn {
namespace {

using test_support::make_frames;
using test_support::narrow_test_profile;
using test_support::small_corpus_config;

Tensor random_tensor(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.data) v = rng.symmetric(scale);
  return t;
}

using OpBuilder = std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>;

/// Max relative error between tape gradients and central differences of
/// sum((op(inputs) - target)^2) over every input scalar.
double op_gradient_error(const OpBuilder& build, std::vector<Tensor> inputs, Rng& rng) {
  Tensor target;
  {
    Tape t;
    std::vector<Tape::Id> ids;
    for (const auto& x : inputs) ids.push_back(t.constant(x));
    target = random_tensor(t.value(build(t, ids)).dims, rng);
  }
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Tape::Id> ids;
    for (const auto& x : xs) ids.push_back(t.constant(x));
    return t.value(squared_error(t, build(t, ids), target, 1.0))[0];
  };
  Tape t;
  std::vector<Tape::Id> ids;
  for (const auto& x : inputs) ids.push_back(t.leaf(x, true));
  const Tape::Id loss = squared_error(t, build(t, ids), target, 1.0);
  t.backward(loss);
  double worst = 0.0;
  constexpr double h = 1e-5;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = t.grad(ids[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double up = evaluate(inputs);
      inputs[k][i] = x0 - h;
      const double down = evaluate(inputs);
      inputs[k][i] = x0;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
  }
  return worst;
}

/// Plain nested-loop convolution.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor out({n, cout, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < cout; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = y * stride - pad + ky, ix = xo * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                acc += w.at(o, c, ky, kx) * x.at(s, c, iy, ix);
              }
          out.at(s, o, y, xo) = acc;
        }
  return out;
}

TEST(Ops, ConvMatchesNestedLoops) {
  Rng rng(1);
  for (const auto& [stride, pad, k] : std::vector<std::tuple<int, int, int>>{{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 0, 2}}) {
    const Tensor x = random_tensor({2, 3, 7, 7}, rng);
    const Tensor w = random_tensor({4, 3, k, k}, rng);
    const Tensor b = random_tensor({4}, rng);
    Tape t;
    const Tensor got = t.value(conv2d(t, t.constant(x), t.constant(w), t.constant(b), stride, pad));
    const Tensor want = naive_conv(x, w, b, stride, pad);
    ASSERT_EQ(got.dims, want.dims);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Ops, TransposedConvIsAdjointOfConv) {
  Rng rng(2);
  for (const auto& [stride, pad, k] : std::vector<std::tuple<int, int, int>>{{2, 1, 4}, {1, 1, 3}, {4, 0, 4}}) {
    const Tensor x = random_tensor({1, 3, 8, 8}, rng);
    const Tensor w = random_tensor({5, 3, k, k}, rng);
    Tape t;
    const Tensor cx = t.value(conv2d(t, t.constant(x), t.constant(w), t.constant(Tensor({5})), stride, pad));
    const Tensor y = random_tensor(cx.dims, rng);
    const Tensor ty = t.value(conv_transpose2d(t, t.constant(y), t.constant(w), t.constant(Tensor({3})), stride, pad));
    ASSERT_EQ(ty.dims, x.dims);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += cx[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Ops, ShiftedSoftplusValues) {
  EXPECT_EQ(softplus_value(0.0), 0.0);
  EXPECT_NEAR(softplus_value(50.0), 50.0 - std::numbers::ln2, 1e-12);
  EXPECT_NEAR(softplus_value(-50.0), -std::numbers::ln2, 1e-12);
  EXPECT_NEAR(softplus_value(1.0), std::log1p(std::exp(1.0)) - std::numbers::ln2, 1e-15);
}

TEST(Ops, LinearAndConcatValues) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  const Tensor w = random_tensor({5, 12}, rng);
  const Tensor b = random_tensor({5}, rng);
  Tape t;
  const Tensor y = t.value(linear(t, t.constant(x), t.constant(w), t.constant(b)));
  ASSERT_EQ(y.dims, (std::vector<int>{2, 5}));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 5; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      for (int d = 0; d < 12; ++d) acc += w[static_cast<std::size_t>(o * 12 + d)] * x[static_cast<std::size_t>(n * 12 + d)];
      EXPECT_NEAR(y[static_cast<std::size_t>(n * 5 + o)], acc, 1e-12);
    }
  const Tensor a = random_tensor({2, 1, 2, 2}, rng);
  const Tensor c = t.value(concat_channels(t, {t.constant(x), t.constant(a)}));
  ASSERT_EQ(c.dims, (std::vector<int>{2, 4, 2, 2}));
  EXPECT_EQ(c.at(1, 3, 1, 0), a.at(1, 0, 1, 0));
  EXPECT_EQ(c.at(1, 2, 0, 1), x.at(1, 2, 0, 1));
}

TEST(Ops, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  struct Case {
    const char* name;
    OpBuilder build;
    std::vector<Tensor> inputs;
  };
  const std::vector<Case> cases = {
      {"conv s1", [](Tape& t, const auto& v) { return conv2d(t, v[0], v[1], v[2], 1, 1); },
       {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}},
      {"conv s2", [](Tape& t, const auto& v) { return conv2d(t, v[0], v[1], v[2], 2, 1); },
       {random_tensor({1, 2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)}},
      {"deconv", [](Tape& t, const auto& v) { return conv_transpose2d(t, v[0], v[1], v[2], 2, 1); },
       {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 4, 4}, rng), random_tensor({3}, rng)}},
      {"softplus", [](Tape& t, const auto& v) { return softplus(t, v[0]); }, {random_tensor({2, 3, 2, 2}, rng, 4.0)}},
      {"add", [](Tape& t, const auto& v) { return add(t, v[0], v[1]); },
       {random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 2, 3, 3}, rng)}},
      {"concat", [](Tape& t, const auto& v) { return concat_channels(t, {v[0], v[1]}); },
       {random_tensor({2, 2, 2, 2}, rng), random_tensor({2, 3, 2, 2}, rng)}},
      {"linear", [](Tape& t, const auto& v) { return linear(t, v[0], v[1], v[2]); },
       {random_tensor({3, 2, 2, 2}, rng), random_tensor({4, 8}, rng), random_tensor({4}, rng)}},
      {"chain", [](Tape& t, const auto& v) { return softplus(t, add(t, conv2d(t, v[0], v[1], v[2], 1, 1), v[0])); },
       {random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)}},
  };
  for (const auto& c : cases) EXPECT_LT(op_gradient_error(c.build, c.inputs, rng), 1e-6) << c.name;
}

TEST(Ops, BackwardNeedsScalarRoot) {
  Tape t;
  const auto x = t.leaf(Tensor({2}, 1.0), true);
  EXPECT_THROW(t.backward(x), Error);
}

class NetTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    frames_ = new std::vector<synth::CorpusFrame>(make_frames(small_corpus_config(4, 21)));
  }
  static void TearDownTestSuite() {
    delete frames_;
    frames_ = nullptr;
  }
  static const synth::CorpusFrame& frame(int i) { return (*frames_)[static_cast<std::size_t>(i)]; }
  static std::vector<Sample> samples(const NetConfig& c) {
    std::vector<Sample> out;
    for (const auto& f : *frames_) out.push_back(make_sample(f, c));
    return out;
  }
  static std::vector<const Sample*> batch_of(const std::vector<Sample>& s) {
    std::vector<const Sample*> out;
    for (const auto& x : s) out.push_back(&x);
    return out;
  }
  static std::vector<synth::CorpusFrame>* frames_;
};
std::vector<synth::CorpusFrame>* NetTest::frames_ = nullptr;

TEST_F(NetTest, TestProfileShapes) {
  const NetConfig c = NetConfig::test_profile();
  const NetParams p = init_params(c, 1);
  const auto full = forward_2d(p, c, frame(0).image, Branch::kFull);
  EXPECT_EQ(full.heatmaps.channels, 15);
  EXPECT_EQ(full.heatmaps.grid, 16);
  EXPECT_EQ(full.intermediates.size(), 2u);
  ASSERT_EQ(full.features.size(), 2u);
  EXPECT_EQ(full.features[0].dims, (std::vector<int>{1, c.channels_after(3), 8, 8}));
  const auto zoom = forward_2d(p, c, frame(0).image, Branch::kZoom);
  EXPECT_EQ(zoom.heatmaps.channels, 8);
  EXPECT_EQ(zoom.heatmaps.branch, Branch::kZoom);
}

TEST(PaperProfile, HeatmapsAre32For256Input) {
  const NetConfig c = NetConfig::paper_profile();
  EXPECT_EQ(c.blocks(), 15);
  EXPECT_EQ(c.supervision_taps, (std::vector<int>{11, 14}));
  EXPECT_EQ(c.distance_taps, (std::vector<int>{13, 15}));
  const NetParams p = init_params(c, 1);
  const Image img(256, 256, 1, 0.4f);
  const auto out = forward_2d(p, c, img, Branch::kFull);
  EXPECT_EQ(out.heatmaps.channels, 15);
  EXPECT_EQ(out.heatmaps.grid, 32);
  for (const auto& s : out.intermediates) EXPECT_EQ(s.grid, 32);
}

TEST_F(NetTest, ZeroHeadGivesZeroHeatmaps) {
  const NetConfig c = NetConfig::test_profile();
  NetParams p = init_params(c, 2);
  for (const char* n : {"full.head.conv2.w", "full.head.conv2.b"}) std::fill(p.at(n).data.begin(), p.at(n).data.end(), 0.0);
  for (int i = 0; i < 3; ++i) {
    for (double v : forward_2d(p, c, frame(i).image, Branch::kFull).heatmaps.values) EXPECT_EQ(v, 0.0);
  }
}

TEST_F(NetTest, ForwardIsDeterministic) {
  const NetConfig c = NetConfig::test_profile();
  const auto a = forward_2d(init_params(c, 3), c, frame(1).image, Branch::kZoom);
  const auto b = forward_2d(init_params(c, 3), c, frame(1).image, Branch::kZoom);
  EXPECT_EQ(a.heatmaps.values, b.heatmaps.values);
  EXPECT_EQ(a.features[1].data, b.features[1].data);
  const auto other = forward_2d(init_params(c, 4), c, frame(1).image, Branch::kZoom);
  EXPECT_NE(a.heatmaps.values, other.heatmaps.values);
}

TEST_F(NetTest, WrongImageSizeIsConfigError) {
  const NetConfig c = NetConfig::test_profile();
  try {
    forward_2d(init_params(c, 1), c, Image(32, 32, 1), Branch::kFull);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST_F(NetTest, DistanceHeadConstantWithZeroWeights) {
  const NetConfig c = NetConfig::test_profile();
  NetParams p = init_params(c, 5);
  auto& w = p.at("distance.fc.w");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  auto& b = p.at("distance.fc.b");
  for (std::size_t j = 0; j < b.size(); ++j) b[j] = 0.5 + 0.1 * static_cast<double>(j);
  const auto full = forward_2d(p, c, frame(0).image, Branch::kFull);
  const auto zoom = forward_2d(p, c, frame(0).image, Branch::kZoom);
  const auto d = forward_distance(p, c, full.features, zoom.features);
  ASSERT_EQ(d.size(), 15u);
  for (std::size_t j = 0; j < 15; ++j) EXPECT_NEAR(d[j], 1000.0 * (0.5 + 0.1 * static_cast<double>(j)), 1e-9);
}

TEST_F(NetTest, DistanceNeedsBothBranches) {
  const NetConfig c = NetConfig::test_profile();
  const NetParams p = init_params(c, 6);
  const auto full = forward_2d(p, c, frame(0).image, Branch::kFull);
  try {
    forward_distance(p, c, full.features, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUsage);
  }
  EXPECT_EQ(forward_distance_no_zoom(p, c, full.features).size(), 15u);
}

TEST_F(NetTest, DistanceRespondsToFeaturesAsFiniteDifferencesSay) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 7);
  const auto full = forward_2d(p, c, frame(2).image, Branch::kFull);
  const auto zoom = forward_2d(p, c, frame(2).image, Branch::kZoom);
  std::vector<Tensor> feats = full.features;
  feats.insert(feats.end(), zoom.features.begin(), zoom.features.end());
  Rng rng(7);
  const auto pick = static_cast<std::size_t>(rng.index(feats[0].size()));
  const std::size_t joint = 9;
  // Analytic derivative of one output distance (meters) with respect to one feature.
  Tape t;
  Binder bind(t, p, train_none());
  std::vector<Tape::Id> ids;
  for (const auto& f : feats) ids.push_back(t.leaf(f, true));
  const Tape::Id out = build_distance_head(bind, "distance", concat_channels(t, ids));
  Tensor select(t.value(out).dims);
  select[joint] = 1.0;
  // 0.5 * sum((out - (out - e_j))^2) has gradient e_j^T d(out)/dx.
  Tensor target = t.value(out);
  target[joint] -= 1.0;
  t.backward(squared_error(t, out, target, 0.5));
  const double analytic = t.grad(ids[0])[pick];
  constexpr double h = 1e-5;
  auto at = [&](double delta) {
    auto f = full.features;
    f[0][pick] += delta;
    return forward_distance(p, c, f, zoom.features)[joint] / 1000.0;
  };
  const double fd = (at(h) - at(-h)) / (2 * h);
  EXPECT_NE(analytic, 0.0);
  EXPECT_NEAR(fd, analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
}

TEST_F(NetTest, BaselineHead) {
  const NetConfig c = NetConfig::test_profile();
  NetParams p = init_params(c, 8);
  const auto v = forward_baseline_vector(p, c, frame(0).image);
  EXPECT_EQ(v.size(), 45u);
  for (const char* n : {"baseline.fc.w", "baseline.fc.b"}) std::fill(p.at(n).data.begin(), p.at(n).data.end(), 0.0);
  for (double x : forward_baseline_vector(p, c, frame(0).image)) EXPECT_EQ(x, 0.0);
}

TEST_F(NetTest, LossVanishesAtGroundTruth) {
  const auto& f = frame(0);
  const auto l = loss(f.heatmaps_full, {f.heatmaps_full, f.heatmaps_full}, f.distances, f);
  EXPECT_EQ(l.total(), 0.0);
  EXPECT_EQ(loss(f.heatmaps_zoom, {}, std::nullopt, f).total(), 0.0);
}

TEST_F(NetTest, LossIsQuadraticInResidual) {
  const auto& f = frame(1);
  Rng rng(9);
  HeatmapStack delta = f.heatmaps_full;
  for (auto& v : delta.values) v = rng.symmetric(0.1);
  std::array<double, kNumJoints> dd{};
  for (auto& v : dd) v = rng.symmetric(100);
  auto at = [&](double k) {
    HeatmapStack pred = f.heatmaps_full;
    for (std::size_t i = 0; i < pred.values.size(); ++i) pred.values[i] += k * delta.values[i];
    std::array<double, kNumJoints> d = f.distances;
    for (std::size_t j = 0; j < kNumJoints; ++j) d[j] += k * dd[j];
    return loss(pred, {pred}, d, f).total();
  };
  EXPECT_NEAR(at(2.0), 4.0 * at(1.0), 1e-12 * at(2.0));
}

TEST_F(NetTest, LossMatchesBruteForceAndDecomposes) {
  const auto& f = frame(2);
  Rng rng(10);
  HeatmapStack pred = f.heatmaps_full;
  for (auto& v : pred.values) v = rng.uniform();
  HeatmapStack inter = f.heatmaps_full;
  for (auto& v : inter.values) v = rng.uniform();
  std::array<double, kNumJoints> d{};
  for (auto& v : d) v = rng.uniform(100, 2000);
  double fin = 0, mid = 0, dist = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    fin += std::pow(pred.values[i] - f.heatmaps_full.values[i], 2);
    mid += 2 * std::pow(inter.values[i] - f.heatmaps_full.values[i], 2);
  }
  for (std::size_t j = 0; j < kNumJoints; ++j) dist += std::pow((d[j] - f.distances[j]) / 1000.0, 2);
  const auto l = loss(pred, {inter, inter}, d, f);
  EXPECT_NEAR(l.final_heatmaps, fin, 1e-9 * fin);
  EXPECT_NEAR(l.intermediate, mid, 1e-9 * mid);
  EXPECT_NEAR(l.distance, dist, 1e-9 * dist);
  EXPECT_NEAR(l.total(), l.final_heatmaps + l.intermediate + l.distance + l.vector, 1e-9);
}

TEST_F(NetTest, BatchLossIsMeanOfSampleLosses) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 11);
  const auto s = samples(c);
  for (Objective o : {Objective::kFull2D, Objective::kDistance, Objective::kBaselineVector}) {
    const double both = objective_loss(p, c, {&s[0], &s[1]}, o).total();
    const double one = objective_loss(p, c, {&s[0]}, o).total();
    const double two = objective_loss(p, c, {&s[1]}, o).total();
    EXPECT_NEAR(both, 0.5 * (one + two), 1e-12 * both) << objective_name(o);
    EXPECT_NEAR(backward(p, c, {&s[0], &s[1]}, o).loss.total(), both, 1e-12 * both);
  }
}

TEST_F(NetTest, BatchLossMatchesSingleFrameOracle) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 12);
  const auto s = samples(c);
  const auto fwd = forward_2d(p, c, frame(3).image, Branch::kFull);
  const auto oracle = loss(fwd.heatmaps, fwd.intermediates, std::nullopt, frame(3));
  const auto batch = objective_loss(p, c, {&s[3]}, Objective::kFull2D);
  EXPECT_NEAR(batch.final_heatmaps, oracle.final_heatmaps, 1e-12);
  EXPECT_NEAR(batch.intermediate, oracle.intermediate, 1e-12);
}

TEST_F(NetTest, UnusedParametersGetExactlyZeroGradient) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 13);
  const auto s = samples(c);
  const auto g = backward(p, c, batch_of(s), Objective::kFull2D);
  EXPECT_EQ(g.grads.size(), p.tensors.size());
  for (const auto& [name, t] : g.grads) {
    if (name.rfind("full.", 0) == 0) continue;
    for (double v : t.data) ASSERT_EQ(v, 0.0) << name;
  }
  double norm = 0.0;
  for (double v : g.grads.at("full.stem.w").data) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST_F(NetTest, GradientsAreDeterministic) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 14);
  const auto s = samples(c);
  const auto a = backward(p, c, batch_of(s), Objective::kDistance);
  const auto b = backward(p, c, batch_of(s), Objective::kDistance);
  for (const auto& [name, t] : a.grads) EXPECT_EQ(t.data, b.grads.at(name).data) << name;
}

TEST_F(NetTest, SampledGradientsMatchFiniteDifferences) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 15);
  const auto s = samples(c);
  const std::vector<const Sample*> batch = {&s[0], &s[1]};
  for (Objective o : {Objective::kFull2D, Objective::kZoom2D, Objective::kDistance, Objective::kDistanceNoZoom,
                      Objective::kBaselineVector}) {
    const auto r = test_support::check_gradients(p, c, batch, o, 2);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel, 1e-4) << objective_name(o) << " worst " << r.worst;
  }
}

TEST_F(NetTest, NonFiniteLossIsDivergence) {
  const NetConfig c = narrow_test_profile();
  NetParams p = init_params(c, 16);
  p.at("full.head.conv2.b")[0] = std::numeric_limits<double>::infinity();
  const auto s = samples(c);
  try {
    backward(p, c, {&s[0]}, Objective::kFull2D);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrainingDiverged);
  }
}

NetParams scalar_params(double x) {
  NetParams p;
  p.tensors.emplace("q", Tensor({1}, x));
  return p;
}

TEST(AdaDelta, FirstStepByHand) {
  TrainConfig tc;
  AdaDeltaState st;
  NetParams p = scalar_params(1.0);
  adadelta_step(st, p, {{"q", Tensor({1}, 2.0)}}, tc);
  const double g2 = 0.1 * 4.0;
  const double dx = std::sqrt(1e-6) / std::sqrt(g2 + 1e-6) * 2.0;
  EXPECT_NEAR(st.grad_sq.at("q")[0], g2, 1e-15);
  EXPECT_NEAR(st.update_sq.at("q")[0], 0.1 * dx * dx, 1e-18);
  EXPECT_NEAR(p.at("q")[0], 1.0 - dx, 1e-15);
}

TEST(AdaDelta, ZeroGradientDecaysAccumulatorsOnly) {
  TrainConfig tc;
  AdaDeltaState st;
  NetParams p = scalar_params(1.0);
  adadelta_step(st, p, {{"q", Tensor({1}, 2.0)}}, tc);
  const double x = p.at("q")[0];
  const double g2 = st.grad_sq.at("q")[0];
  const double u2 = st.update_sq.at("q")[0];
  adadelta_step(st, p, {{"q", Tensor({1}, 0.0)}}, tc);
  EXPECT_EQ(p.at("q")[0], x);
  EXPECT_NEAR(st.grad_sq.at("q")[0], 0.9 * g2, 1e-18);
  EXPECT_NEAR(st.update_sq.at("q")[0], 0.9 * u2, 1e-24);
}

TEST(AdaDelta, ZeroMultiplierFreezes) {
  TrainConfig tc;
  tc.lr_multipliers["q"] = 0.0;
  AdaDeltaState st;
  NetParams p = scalar_params(1.0);
  for (int i = 0; i < 5; ++i) adadelta_step(st, p, {{"q", Tensor({1}, 2.0)}}, tc);
  EXPECT_EQ(p.at("q")[0], 1.0);
}

TEST(AdaDelta, QuadraticDecreasesMonotonically) {
  TrainConfig tc;
  AdaDeltaState st;
  NetParams p = scalar_params(0.0);
  auto f = [](double x) { return (x - 3.0) * (x - 3.0); };
  double prev = f(0.0);
  for (int i = 0; i < 100; ++i) {
    const double x = p.at("q")[0];
    adadelta_step(st, p, {{"q", Tensor({1}, 2.0 * (x - 3.0))}}, tc);
    const double now = f(p.at("q")[0]);
    EXPECT_LT(now, prev) << "step " << i;
    prev = now;
  }
}

TEST(TrainConfigTest, LowRateBlocksAndPrefixes) {
  TrainConfig tc;
  tc.low_lr_blocks = 2;
  tc.lr_multipliers["distance."] = 0.5;
  EXPECT_DOUBLE_EQ(tc.multiplier("full.stem.w"), 0.001);
  EXPECT_DOUBLE_EQ(tc.multiplier("zoom.block2.conv1.w"), 0.001);
  EXPECT_DOUBLE_EQ(tc.multiplier("full.block3.conv1.w"), 1.0);
  EXPECT_DOUBLE_EQ(tc.multiplier("full.block12.conv1.w"), 1.0);
  EXPECT_DOUBLE_EQ(tc.multiplier("distance.fc.w"), 0.5);
}

TEST(TrainConfigTest, JsonRoundTripAndValidation) {
  TrainConfig tc;
  tc.batch_size = 3;
  tc.lr_multipliers["full.head."] = 2.0;
  tc.seed = 77;
  const auto back = train_config_from_json(Json::parse(train_config_to_json(tc).dump()));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(tc));
  EXPECT_THROW(train_config_from_json(Json{{"batch", 2}}), Error);
  EXPECT_THROW(train_config_from_json(Json{{"batch_size", 0}}), Error);
  EXPECT_THROW(train_config_from_json(Json{{"rho", 1.0}}), Error);
}

TEST(NetConfigTest, ValidationAndJson) {
  NetConfig c = NetConfig::test_profile();
  EXPECT_NO_THROW(c.validate());
  c.supervision_taps = {4};
  EXPECT_THROW(c.validate(), Error);
  c = NetConfig::test_profile();
  c.distance_taps = {5};
  EXPECT_THROW(c.validate(), Error);
  const NetConfig paper = net_config_from_json(Json{{"profile", "paper"}});
  EXPECT_EQ(net_config_to_json(paper), net_config_to_json(NetConfig::paper_profile()));
  EXPECT_THROW(net_config_from_json(Json{{"blocks", 3}}), Error);
  EXPECT_THROW(NetConfig::for_profile("huge"), Error);
}

TEST(Init, DeterministicPerSeedAndName) {
  const NetConfig c = NetConfig::test_profile();
  const auto a = init_params(c, 5);
  const auto b = init_params(c, 5);
  const auto d = init_params(c, 6);
  EXPECT_EQ(a.tensors.size(), b.tensors.size());
  for (const auto& [name, t] : a.tensors) EXPECT_EQ(t.data, b.at(name).data) << name;
  EXPECT_NE(a.at("full.stem.w").data, d.at("full.stem.w").data);
  EXPECT_NO_THROW(check_params(a, c));
  for (double v : a.at("distance.fc.b").data) EXPECT_EQ(v, kInitialDistanceM);
}

TEST_F(NetTest, ZeroIterationsKeepsInitialization) {
  const NetConfig c = narrow_test_profile();
  TrainConfig tc;
  tc.iterations_full = tc.iterations_zoom = tc.iterations_distance = 0;
  tc.seed = 3;
  const auto r = train(tc, c, samples(c));
  EXPECT_TRUE(r.log.empty());
  const auto init = init_params(c, 3);
  for (const auto& [name, t] : init.tensors) EXPECT_EQ(r.params.at(name).data, t.data);
}

TEST_F(NetTest, DistanceStageLeaves2DModuleBitIdentical) {
  const NetConfig c = narrow_test_profile();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.iterations_full = tc.iterations_zoom = 0;
  tc.iterations_distance = 4;
  tc.iterations_baseline = 2;
  const auto init = init_params(c, tc.seed);
  const auto r = train(tc, c, samples(c));
  ASSERT_FALSE(r.diverged);
  EXPECT_EQ(r.log.size(), 6u);
  bool distance_moved = false;
  for (const auto& [name, t] : init.tensors) {
    if (name.rfind("full.", 0) == 0 || name.rfind("zoom.", 0) == 0) {
      EXPECT_EQ(r.params.at(name).data, t.data) << name;
    }
    if (name.rfind("distance.", 0) == 0) distance_moved = distance_moved || r.params.at(name).data != t.data;
  }
  EXPECT_TRUE(distance_moved);
}

TEST_F(NetTest, TrainingLogIsDeterministic) {
  const NetConfig c = narrow_test_profile();
  TrainConfig tc;
  tc.batch_size = 3;
  tc.iterations_full = 3;
  tc.iterations_zoom = 2;
  tc.iterations_distance = 2;
  const auto a = train(tc, c, samples(c));
  const auto b = train(tc, c, samples(c));
  EXPECT_EQ(log_to_csv(a.log), log_to_csv(b.log));
  for (const auto& [name, t] : a.params.tensors) EXPECT_EQ(t.data, b.params.at(name).data);
  EXPECT_EQ(a.log.front().stage, "full");
  EXPECT_EQ(a.log.back().stage, "distance");
  EXPECT_EQ(log_to_csv(a.log).rfind("iteration,stage,total,", 0), 0u);
}

TEST_F(NetTest, DivergenceReturnsLastFiniteParameters) {
  const NetConfig c = narrow_test_profile();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.learning_rate = 1e300;
  tc.iterations_full = 5;
  tc.iterations_zoom = tc.iterations_distance = 0;
  const auto r = train(tc, c, samples(c));
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.message.empty());
  EXPECT_NO_THROW(check_params(r.params, c));
}

TEST_F(NetTest, CheckpointRoundTrip) {
  const NetConfig c = narrow_test_profile();
  const NetParams p = init_params(c, 17);
  const auto path = test_support::scratch_dir("ckpt") / "model.json";
  save_checkpoint(path, p, c);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(net_config_to_json(back.config), net_config_to_json(c));
  for (const auto& [name, t] : p.tensors) {
    EXPECT_EQ(back.params.at(name).dims, t.dims);
    EXPECT_EQ(back.params.at(name).data, t.data) << name;
  }
  Json j = checkpoint_to_json(p, c);
  j["format"] = "something-else";
  EXPECT_THROW(checkpoint_from_json(j), Error);
}

}  // namespace
}  // namespace egopose::nn
