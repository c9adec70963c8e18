// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "diffcap/data.hpp"
#include "diffcap/diffusion.hpp"
#include "diffcap/model.hpp"
#include "diffcap/bleu.hpp"
#include "diffcap/optim.hpp"

namespace diffcap {

double lr_at(int step, int total_steps, const TrainConfig& cfg);

// Constant mode returns lambda_value. Dynamic mode returns
// l_simple_prime / l_r * C, falling back to lambda_value (with a warning on
// stderr) when l_r is zero.
double lambda_at(double l_simple_prime, double l_r, const TrainConfig& cfg);

// One (caption, condition) training pair.
struct Example {
  std::vector<int> ids;
  PadMask mask;
  CondFeatures cond;
  std::vector<Sentence> references;
};

// Every caption of every record becomes an example.
std::vector<Example> make_examples(const std::vector<CaptionRecord>& records,
                                   const FeatureFile& features, const Vocab& vocab, int L);

// Random quantities consumed by one example's loss.
struct ExampleDraw {
  int t = 1;
  Mat eps;   // noise for x_t (and the coupled target)
  Mat eps1;  // noise for the x_1 restoring sample
  bool drop_cond = false;
};

ExampleDraw draw_example(const CaptionModel& model, std::mt19937_64& rng, bool guidance,
                         double p_uncond);

struct ExampleLoss {
  double l_simple_prime = 0.0;
  double l_r = 0.0;
};

// Loss of a single example. When `grads` is non-null, accumulates
// grad_scale * d(l_simple_prime + lambda * l_r) into it; `d_embedding`
// (vocab x D_word) receives the embedding-table gradient when non-null.
ExampleLoss example_loss(const CaptionModel& model, const Example& ex, const ExampleDraw& draw,
                         double lambda, ParamSet* grads = nullptr, Mat* d_embedding = nullptr,
                         double grad_scale = 1.0);

// Optimizer state carried across steps.
struct TrainerState {
  AdamW optimizer;
  std::optional<AdamW> embedding_optimizer;  // only with a trainable table
  std::mt19937_64 rng;
  double lambda = 0.3;
  int step = 0;
  int total_steps = 1;
  ParamSet grads;  // scratch

  TrainerState(const CaptionModel& model, const TrainConfig& cfg);
};

struct StepLog {
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

// Draws per-example t / noise / condition dropout, evaluates the compound
// loss, applies one AdamW update with lr_at(step) and the current lambda,
// then refreshes lambda. Returns the pre-update loss.
StepLog train_step(const std::vector<const Example*>& batch, CaptionModel& model,
                   TrainerState& state);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double train_l_simple_prime = 0.0;
  double train_l_r = 0.0;
  double train_total = 0.0;
  double val_l_simple_prime = 0.0;
  double val_l_r = 0.0;
  double val_total = 0.0;
  std::optional<double> bleu4;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// Mean loss over `examples` under draws from a fixed seed, no dropout.
ExampleLoss mean_loss(const CaptionModel& model, const std::vector<Example>& examples,
                      double lambda, std::uint64_t seed);

struct FitOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::filesystem::path resume_from;
  bool restore_best = true;
  // Called after an epoch's metrics are computed and before the stopping rule
  // is applied; may rewrite the metrics.
  std::function<void(EpochMetrics&)> on_epoch_end;
};

struct FitResult {
  std::vector<EpochMetrics> epochs;
  std::vector<StepLog> steps;
  bool stopped_early = false;
  int best_epoch = 0;  // 0: initial weights
};

// Trains until epochs_max or until the epoch-mean validation total loss
// exceeds the epoch-mean training total loss. With `out_dir` set, writes
// metrics.csv, checkpoints/last (with optimizer state) after every epoch and
// checkpoints/final (best validation weights) at the end.
FitResult fit(CaptionModel& model, const std::vector<CaptionRecord>& train,
              const std::vector<CaptionRecord>& val, const FeatureFile& features,
              const FitOptions& opts = {});

}  // namespace diffcap
