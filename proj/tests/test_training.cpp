// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "diffcap/error.hpp"
#include "diffcap/training.hpp"
#include "gradcheck.hpp"

using namespace diffcap;
namespace fs = std::filesystem;

namespace {

TrainConfig lr_config(LrKind kind) {
  TrainConfig c;
  c.lr_kind = kind;
  c.lr_start = 1e-4;
  c.lr_end = 5e-5;
  return c;
}

Config small_config() {
  Config cfg;
  cfg.model.layers = 2;
  cfg.model.heads = 2;
  cfg.model.d_word = 16;
  cfg.model.max_len = 8;
  cfg.train.bleu_every = 0;
  return cfg;
}

struct Toy {
  Dataset ds;
  std::vector<std::string> heldout;
  Vocab vocab;
};

Toy toy(int scenes = 8) {
  Toy t;
  ToyCorpusOptions o;
  o.num_scenes = scenes;
  t.ds = make_toy_dataset(o, &t.heldout);
  std::vector<std::string> texts;
  for (const auto& r : t.ds.records)
    for (const auto& c : r.captions) texts.push_back(c);
  t.vocab = Vocab::from_texts(texts);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("diffcap_training_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(LearningRate, PublishedEndpoints) {
  const TrainConfig c = lr_config(LrKind::kLinear);
  EXPECT_DOUBLE_EQ(lr_at(0, 1000, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(1000, 1000, c), 5e-5);
  EXPECT_NEAR(lr_at(500, 1000, lr_config(LrKind::kCosine)), 7.5e-5, 1e-18);
  EXPECT_NEAR(lr_at(500, 1000, lr_config(LrKind::kLog)), std::sqrt(1e-4 * 5e-5), 1e-18);
  EXPECT_DOUBLE_EQ(lr_at(700, 1000, lr_config(LrKind::kConstant)), 1e-4);
  EXPECT_NEAR(lr_at(1000, 1000, lr_config(LrKind::kCosine)), 5e-5, 1e-18);
  EXPECT_NEAR(lr_at(1000, 1000, lr_config(LrKind::kLog)), 5e-5, 1e-18);
}

TEST(LearningRate, MonotoneNonIncreasing) {
  for (LrKind k : {LrKind::kLinear, LrKind::kLog, LrKind::kCosine, LrKind::kConstant}) {
    const TrainConfig c = lr_config(k);
    for (int s = 1; s <= 777; ++s) EXPECT_LE(lr_at(s, 777, c), lr_at(s - 1, 777, c));
  }
}

TEST(Lambda, ConstantAndDynamic) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(lambda_at(123.0, 0.5, c), 0.3);
  c.lambda_kind = LambdaKind::kDynamic;
  c.dynamic_C = 1.0;
  EXPECT_DOUBLE_EQ(lambda_at(2.8, 1.0, c), 2.8);
  c.dynamic_C = 3.0;
  EXPECT_DOUBLE_EQ(lambda_at(4.0, 8.0, c), 1.5);
  EXPECT_DOUBLE_EQ(lambda_at(4.0, 0.0, c), c.lambda_value);
}

TEST(TrainConfigValidation, RejectsInvalidRanges) {
  TrainConfig c;
  c.lr_end = 2e-4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda_value = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.guidance.p_uncond = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ExampleLoss, ZeroLambdaDecouplesRoundingLoss) {
  gradcheck::Instance inst = gradcheck::tiny_instance(Fusion::kConcat, PredictionMode::kX0, 420);
  inst.model.cfg.diffusion.x1_every_step = false;
  const CaptionModel& m = inst.model;
  ParamSet g = m.denoiser.params().zeros_like();
  example_loss(m, inst.example, inst.draw, 0.0, &g);

  // Same gradient assembled from L_simple' alone.
  const LatentSeq x0 = embed(inst.example.ids, m.table, inst.example.mask);
  const LatentSeq xt = sample_forward(x0, 420, inst.draw.eps, m.schedule, m.cfg.diffusion.noise_coeff);
  Denoiser::Trace trace;
  const Mat pred = m.denoiser.forward(xt.values, 420, inst.example.cond, &trace);
  Mat d_pred, d_unused;
  simple_prime_loss(pred, x0.values, Mat(), Mat(), inst.example.mask, &d_pred, &d_unused);
  ParamSet want = m.denoiser.params().zeros_like();
  m.denoiser.backward(trace, d_pred, want);
  for (const auto& [name, t] : g.tensors()) EXPECT_TRUE((t - want.at(name)).isZero(1e-13)) << name;

  ParamSet g_lambda = m.denoiser.params().zeros_like();
  example_loss(m, inst.example, inst.draw, 0.3, &g_lambda);
  double diff = 0.0;
  for (const auto& [name, t] : g.tensors()) diff += (t - g_lambda.at(name)).squaredNorm();
  EXPECT_GT(diff, 0.0);
}

TEST(TrainStep, DeterministicAcrossFreshRuns) {
  const Toy t = toy(4);
  Config cfg = small_config();
  auto run = [&] {
    CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
    const auto ex = make_examples(t.ds.records, t.ds.features, m.vocab, cfg.model.max_len);
    TrainerState st(m, cfg.train);
    std::vector<double> out;
    for (int s = 0; s < 5; ++s) {
      std::vector<const Example*> batch{&ex[static_cast<size_t>(s) % ex.size()], &ex[0]};
      const StepLog l = train_step(batch, m, st);
      out.insert(out.end(), {l.loss.l_simple_prime, l.loss.l_r, l.loss.total, l.lr});
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStep, DynamicLambdaFollowsPreviousStep) {
  const Toy t = toy(4);
  Config cfg = small_config();
  cfg.train.lambda_kind = LambdaKind::kDynamic;
  cfg.train.dynamic_C = 3.0;
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const auto ex = make_examples(t.ds.records, t.ds.features, m.vocab, cfg.model.max_len);
  TrainerState st(m, cfg.train);
  std::vector<const Example*> batch;
  for (const auto& e : ex) batch.push_back(&e);
  std::vector<StepLog> logs;
  for (int s = 0; s < 6; ++s) logs.push_back(train_step(batch, m, st));
  EXPECT_DOUBLE_EQ(logs[0].loss.lambda, cfg.train.lambda_value);
  for (size_t k = 1; k < logs.size(); ++k)
    EXPECT_EQ(logs[k].loss.lambda, logs[k - 1].loss.l_simple_prime / logs[k - 1].loss.l_r * 3.0);
}

TEST(TrainStep, NonFiniteParametersHaltTraining) {
  const Toy t = toy(2);
  Config cfg = small_config();
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const auto ex = make_examples(t.ds.records, t.ds.features, m.vocab, cfg.model.max_len);
  TrainerState st(m, cfg.train);
  m.denoiser.params().at("out.w")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_step({&ex[0]}, m, st), DivergenceError);
}

TEST(TrainStep, TrainableEmbeddingMoves) {
  const Toy t = toy(2);
  Config cfg = small_config();
  cfg.embedding.trainable = true;
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const Mat before = m.table.matrix;
  const auto ex = make_examples(t.ds.records, t.ds.features, m.vocab, cfg.model.max_len);
  TrainerState st(m, cfg.train);
  ASSERT_TRUE(st.embedding_optimizer.has_value());
  train_step({&ex[0], &ex[1]}, m, st);
  EXPECT_GT((m.table.matrix - before).norm(), 0.0);
}

TEST(Fit, SingleRecordOverfits) {
  const Toy t = toy(4);
  const std::vector<CaptionRecord> one{t.ds.records[0]};
  Config cfg;  // default model size
  cfg.train.epochs_max = 200;  // one step per epoch
  cfg.train.early_stop = false;
  cfg.train.bleu_every = 0;
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const auto ex = make_examples(one, t.ds.features, m.vocab, cfg.model.max_len);
  const ExampleLoss before = mean_loss(m, ex, 0.3, 77);
  FitOptions fo;
  fo.restore_best = false;
  const FitResult r = fit(m, one, one, t.ds.features, fo);
  ASSERT_EQ(r.steps.size(), 200u);
  const ExampleLoss after = mean_loss(m, ex, 0.3, 77);
  EXPECT_LE(after.l_simple_prime, 0.5 * before.l_simple_prime);
  EXPECT_LE(r.steps.back().loss.l_simple_prime, 0.5 * r.steps.front().loss.l_simple_prime);
  EXPECT_LT(r.steps.back().loss.total, r.steps.front().loss.total);
  EXPECT_LT(after.l_r, before.l_r);
}

TEST(Fit, StopsWhenValidationExceedsTraining) {
  const Toy t = toy(6);
  const Split sp = split_by_keys(t.ds.records, t.heldout);
  Config cfg = small_config();
  cfg.train.epochs_max = 6;
  for (int k : {1, 3}) {
    CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
    FitOptions fo;
    fo.on_epoch_end = [k](EpochMetrics& e) {
      e.val_total = e.epoch >= k ? e.train_total + 1.0 : e.train_total - 1.0;
    };
    const FitResult r = fit(m, sp.train, sp.val, t.ds.features, fo);
    EXPECT_TRUE(r.stopped_early);
    ASSERT_EQ(r.epochs.size(), static_cast<size_t>(k));
    EXPECT_EQ(r.epochs.back().epoch, k);
  }
}

TEST(Fit, StopsWithinEpochBudget) {
  const Toy t = toy(16);
  const Split sp = split_by_keys(t.ds.records, t.heldout);
  Config cfg = small_config();
  cfg.train.epochs_max = 15;
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const FitResult r = fit(m, sp.train, sp.val, t.ds.features);
  EXPECT_GE(r.epochs.size(), 1u);
  EXPECT_LE(r.epochs.size(), 15u);
  EXPECT_EQ(r.stopped_early, r.epochs.size() < 15u);
}

TEST(Fit, ZeroEpochsWritesInitialCheckpointOnly) {
  const Toy t = toy(4);
  Config cfg = small_config();
  cfg.train.epochs_max = 0;
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const Mat w = m.denoiser.params().at("out.w");
  const fs::path out = fresh_dir("zero");
  FitOptions fo;
  fo.out_dir = out;
  const FitResult r = fit(m, {t.ds.records[0]}, {t.ds.records[1]}, t.ds.features, fo);
  EXPECT_TRUE(r.epochs.empty());
  EXPECT_TRUE(r.steps.empty());
  EXPECT_EQ(slurp(out / "metrics.csv"), metrics_csv_header() + "\n");
  const CaptionModel init = load_checkpoint(out / "checkpoints" / "final");
  EXPECT_TRUE(init.denoiser.params().at("out.w").isApprox(w, 1e-6));
  EXPECT_FALSE(fs::exists(out / "checkpoints" / "last"));
  fs::remove_all(out);
}

TEST(Fit, MetricsCsvAndRestoresBest) {
  const Toy t = toy(6);
  const Split sp = split_by_keys(t.ds.records, t.heldout);
  Config cfg = small_config();
  cfg.train.epochs_max = 3;
  cfg.train.early_stop = false;
  cfg.train.bleu_every = 2;
  const fs::path out = fresh_dir("csv");
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  FitOptions fo;
  fo.out_dir = out;
  fo.on_epoch_end = [](EpochMetrics& e) { e.val_total = e.epoch == 2 ? -1.0 : 10.0; };
  const FitResult r = fit(m, sp.train, sp.val, t.ds.features, fo);
  EXPECT_EQ(r.best_epoch, 2);
  std::istringstream csv(slurp(out / "metrics.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], metrics_csv_header());
  EXPECT_EQ(lines[1].back(), ',');  // BLEU skipped on epoch 1
  EXPECT_NE(lines[2].back(), ',');
  EXPECT_NE(lines[3].back(), ',');  // always scored on the last epoch
  EXPECT_EQ(lines[2].rfind("2,", 0), 0u);
  const CaptionModel best = load_checkpoint(out / "checkpoints" / "best");
  const CaptionModel final_model = load_checkpoint(out / "checkpoints" / "final");
  EXPECT_TRUE(best.denoiser.params().at("out.w").cwiseEqual(final_model.denoiser.params().at("out.w")).all());
  fs::remove_all(out);
}

TEST(Fit, ResumeContinuesFromLastEpoch) {
  const Toy t = toy(6);
  const Split sp = split_by_keys(t.ds.records, t.heldout);
  Config cfg = small_config();
  cfg.train.epochs_max = 4;
  cfg.train.early_stop = false;
  const fs::path out = fresh_dir("resume");
  {
    CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
    FitOptions fo;
    fo.out_dir = out;
    fo.on_epoch_end = [](EpochMetrics& e) {
      if (e.epoch == 2) throw DivergenceError("interrupted");
    };
    EXPECT_THROW(fit(m, sp.train, sp.val, t.ds.features, fo), DivergenceError);
  }
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  FitOptions fo;
  fo.out_dir = out;
  fo.resume_from = out / "checkpoints" / "last";
  const FitResult r = fit(m, sp.train, sp.val, t.ds.features, fo);
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(r.epochs.front().epoch, 2);
  std::istringstream csv(slurp(out / "metrics.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 1 + 1 + 3);
  fs::remove_all(out);
}

TEST(Fit, ResumeHonoursNewBudgetAndRejectsOtherArchitectures) {
  const Toy t = toy(6);
  const Split sp = split_by_keys(t.ds.records, t.heldout);
  Config cfg = small_config();
  cfg.train.epochs_max = 2;
  cfg.train.early_stop = false;
  const fs::path out = fresh_dir("extend");
  {
    CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
    FitOptions fo;
    fo.out_dir = out;
    ASSERT_EQ(fit(m, sp.train, sp.val, t.ds.features, fo).epochs.size(), 2u);
  }
  FitOptions fo;
  fo.out_dir = out;
  fo.resume_from = out / "checkpoints" / "last";
  cfg.train.epochs_max = 4;
  CaptionModel m = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  const FitResult r = fit(m, sp.train, sp.val, t.ds.features, fo);
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.epochs.back().epoch, 4);
  EXPECT_EQ(m.cfg.train.epochs_max, 4);

  cfg.model.d_word = 32;
  CaptionModel wider = make_caption_model(cfg, t.vocab, t.ds.features.dim);
  EXPECT_THROW(fit(wider, sp.train, sp.val, t.ds.features, fo), ConfigError);
  fs::remove_all(out);
}
