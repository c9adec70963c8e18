// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "diffcap/denoiser.hpp"
#include "diffcap/error.hpp"
#include "gradcheck.hpp"

using namespace diffcap;

namespace {

DenoiserConfig small_config(Fusion fusion = Fusion::kConcat) {
  DenoiserConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_word = 8;
  c.d_clip = 6;
  c.L = 5;
  c.vocab = 12;
  c.fusion = fusion;
  return c;
}

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

CondFeatures random_cond(std::mt19937_64& rng, int d_clip, bool with_text = false) {
  CondFeatures c;
  c.image = randn(rng, d_clip, 1);
  if (with_text) c.text = Vec(randn(rng, d_clip, 1));
  return c;
}

}  // namespace

TEST(Denoiser, OutputShapeAndDeterminism) {
  const Denoiser d(small_config(), 3);
  std::mt19937_64 rng(1);
  const Mat x = randn(rng, 5, 8);
  const CondFeatures c = random_cond(rng, 6);
  const Mat a = d.forward(x, 400, c);
  const Mat b = d.forward(x, 400, c);
  ASSERT_EQ(a.rows(), 5);
  ASSERT_EQ(a.cols(), 8);
  EXPECT_TRUE(a.cwiseEqual(b).all());
  EXPECT_TRUE(a.allFinite());
  EXPECT_FALSE(a.isApprox(d.forward(x, 401, c)));
  const Denoiser same_seed(small_config(), 3);
  EXPECT_TRUE(same_seed.forward(x, 400, c).cwiseEqual(a).all());
}

TEST(Denoiser, ProjectionWithZeroWeightsIsZero) {
  Denoiser d(small_config(), 4);
  for (const char* n : {"proj_image.w1", "proj_image.b1", "proj_image.w2", "proj_image.b2"})
    d.params().at(n).setZero();
  std::mt19937_64 rng(2);
  const Mat rows = d.project_condition(random_cond(rng, 6));
  ASSERT_EQ(rows.rows(), 1);
  ASSERT_EQ(rows.cols(), 8);
  EXPECT_TRUE(rows.isZero(0.0));
}

TEST(Denoiser, ProjectionRejectsWrongWidth) {
  const Denoiser d(small_config(), 4);
  std::mt19937_64 rng(2);
  EXPECT_THROW(d.project_condition(random_cond(rng, 5)), ArgumentError);
}

TEST(Fuse, ConcatAppendsConditionTokens) {
  std::mt19937_64 rng(3);
  const Mat x = randn(rng, 5, 8);
  const Denoiser d(small_config(), 5);
  const FusedSeq one = d.fuse(x, d.project_condition(random_cond(rng, 6)));
  EXPECT_EQ(one.values.rows(), 6);
  EXPECT_EQ(one.discard, std::vector<int>{5});

  DenoiserConfig with_text = small_config();
  with_text.text_slot = true;
  const Denoiser t(with_text, 5);
  const Mat rows = t.project_condition(random_cond(rng, 6, true));
  ASSERT_EQ(rows.rows(), 2);
  const FusedSeq two = t.fuse(x, rows);
  EXPECT_EQ(two.values.rows(), 7);
  EXPECT_EQ(two.discard, (std::vector<int>{5, 6}));
  const Mat& seg = t.params().at("seg");
  EXPECT_TRUE(two.values.row(6).isApprox(rows.row(1) + seg.row(1)));
  EXPECT_TRUE(two.values.row(0).isApprox(x.row(0) + t.params().at("pos").row(0) + seg.row(0)));
}

TEST(Fuse, AddWithZeroConditionIsBaseline) {
  std::mt19937_64 rng(4);
  const Mat x = randn(rng, 5, 8);
  const Denoiser d(small_config(Fusion::kAdd), 6);
  const FusedSeq f = d.fuse(x, Mat::Zero(1, 8));
  EXPECT_EQ(f.values.rows(), 5);
  EXPECT_TRUE(f.discard.empty());
  EXPECT_TRUE(f.values.cwiseEqual(x + d.params().at("pos")).all());
  const Mat c = randn(rng, 1, 8);
  Mat want = x + d.params().at("pos");
  want.rowwise() += c.row(0);
  EXPECT_TRUE(d.fuse(x, c).values.isApprox(want, 1e-15));
}

TEST(Guidance, ZeroWeightIsPlainForward) {
  const Denoiser d(small_config(), 7);
  std::mt19937_64 rng(5);
  const Mat x = randn(rng, 5, 8);
  const CondFeatures c = random_cond(rng, 6);
  const auto before = d.forward_calls();
  const Mat g = d.guided_forward(x, 250, c, 0.0);
  EXPECT_EQ(d.forward_calls() - before, 1u);
  EXPECT_TRUE(g.cwiseEqual(d.forward(x, 250, c)).all());
}

TEST(Guidance, AffineInBothBranches) {
  DenoiserConfig cfg = small_config();
  cfg.text_slot = true;
  const Denoiser d(cfg, 8);
  std::mt19937_64 rng(6);
  const Mat x = randn(rng, 5, 8);
  const CondFeatures c = random_cond(rng, 6, true);
  const Mat cond = d.forward(x, 600, c);
  const Mat uncond = d.forward(x, 600, c.as_null());
  EXPECT_FALSE(cond.isApprox(uncond));
  for (double w : {0.3, 1.0, 2.5}) {
    const Mat want = (1.0 + w) * cond - w * uncond;
    EXPECT_TRUE(d.guided_forward(x, 600, c, w).isApprox(want, 1e-14)) << w;
  }
  const Mat null_out = d.forward(x, 600, c.as_null());
  EXPECT_TRUE(d.guided_forward(x, 600, c.as_null(), 0.7).isApprox(null_out, 1e-14));
  EXPECT_THROW(d.guided_forward(x, 600, c, -0.1), ArgumentError);
}

TEST(Denoiser, BatchOrderPermutesOutputs) {
  const Denoiser d(small_config(), 9);
  std::mt19937_64 rng(7);
  std::vector<Mat> xs;
  std::vector<int> ts;
  std::vector<CondFeatures> cs;
  for (int i = 0; i < 4; ++i) {
    xs.push_back(randn(rng, 5, 8));
    ts.push_back(100 * (i + 1));
    cs.push_back(random_cond(rng, 6));
  }
  const std::vector<size_t> perm{2, 0, 3, 1};
  std::vector<Mat> px;
  std::vector<int> pt;
  std::vector<CondFeatures> pc;
  for (size_t p : perm) {
    px.push_back(xs[p]);
    pt.push_back(ts[p]);
    pc.push_back(cs[p]);
  }
  const auto out = d.forward_batch(xs, ts, cs);
  const auto pout = d.forward_batch(px, pt, pc);
  for (size_t i = 0; i < perm.size(); ++i) EXPECT_TRUE(pout[i].cwiseEqual(out[perm[i]]).all());
  EXPECT_THROW(d.forward_batch(xs, {1}, cs), ArgumentError);
}

TEST(Denoiser, NonFiniteInputDiverges) {
  const Denoiser d(small_config(), 10);
  std::mt19937_64 rng(8);
  Mat x = randn(rng, 5, 8);
  x(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(d.forward(x, 10, random_cond(rng, 6)), DivergenceError);
  EXPECT_THROW(d.forward(randn(rng, 4, 8), 10, random_cond(rng, 6)), ArgumentError);
}

TEST(Denoiser, InvalidConfig) {
  DenoiserConfig c = small_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.vocab = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_fusion("sum"), ConfigError);
}

TEST(Denoiser, ConditionRowsDoNotReachOutput) {
  // Output covers caption rows only; the backward pass routes gradient into
  // condition rows solely through attention.
  gradcheck::Instance inst = gradcheck::tiny_instance(Fusion::kConcat, PredictionMode::kX0, 300);
  const Mat out = inst.model.denoiser.forward(Mat::Zero(4, 8), 300, inst.example.cond);
  EXPECT_EQ(out.rows(), 4);
}

struct GradCase {
  Fusion fusion;
  PredictionMode mode;
  int t;
  bool trainable;
  bool x1_every_step;
};

class Gradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(Gradient, MatchesCentralDifferences) {
  const GradCase gc = GetParam();
  gradcheck::Instance inst = gradcheck::tiny_instance(gc.fusion, gc.mode, gc.t, gc.trainable);
  inst.model.cfg.diffusion.x1_every_step = gc.x1_every_step;
  const gradcheck::Report rep = gradcheck::run(inst, 0.3);
  EXPECT_GT(rep.checked, 500);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst;
}

INSTANTIATE_TEST_SUITE_P(
    Pipeline, Gradient,
    ::testing::Values(GradCase{Fusion::kConcat, PredictionMode::kX0, 300, false, true},
                      GradCase{Fusion::kAdd, PredictionMode::kX0, 700, false, true},
                      GradCase{Fusion::kConcat, PredictionMode::kXtMinusN, 450, false, true},
                      GradCase{Fusion::kConcat, PredictionMode::kX0, 300, true, true},
                      GradCase{Fusion::kAdd, PredictionMode::kXtMinusN, 120, true, true},
                      GradCase{Fusion::kConcat, PredictionMode::kX0, 1, true, false}));
