// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffcap/bleu.hpp"
#include "diffcap/config.hpp"
#include "diffcap/data.hpp"
#include "diffcap/model.hpp"

namespace diffcap {

// `stages` timesteps drawn evenly (by index) from the accelerated subset,
// strictly decreasing from T down to the smallest subset element.
std::vector<int> stage_timesteps(const std::vector<int>& subset, int stages);

// Converts the denoiser output at x_t into an x_0 estimate. In x0 mode this is
// the identity; in x_{t-n} mode the coupled forward relation is inverted.
Mat estimate_x0(const Mat& prediction, const Mat& x_t, int t, const CaptionModel& model);

struct GenResult {
  std::string caption;
  std::vector<std::string> words;
  std::vector<int> stage_t;
  std::uint64_t forward_passes = 0;
  Mat final_x0;
};

// Starts from x_T ~ N(0, I) drawn with `seed`, predicts x_0 at every stage
// and moves to the next stage timestep: deterministic stepping re-uses the
// implied noise direction (ddim) or drops it (zero); stochastic stepping
// draws fresh noise.
GenResult generate(const CaptionModel& model, const CondFeatures& cond, const GenConfig& gcfg,
                   std::uint64_t seed);

CondFeatures condition_for(const CaptionRecord& record, const FeatureFile& features);

struct SentenceScore {
  std::string key;
  std::string candidate;
  double bleu4 = 0.0;
};

struct EvalReport {
  BleuResult bleu;
  long n = 0;
  std::vector<SentenceScore> sentences;
  std::vector<Sentence> candidates;
};

// Caption of record i is generated with seed + i.
EvalReport evaluate(const CaptionModel& model, const std::vector<CaptionRecord>& records,
                    const FeatureFile& features, const GenConfig& gcfg, std::uint64_t seed);

}  // namespace diffcap
