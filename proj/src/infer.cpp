// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/infer.hpp"

#include <cmath>
#include <random>

#include "diffcap/error.hpp"

namespace diffcap {

std::vector<int> stage_timesteps(const std::vector<int>& subset, int stages) {
  const int n = static_cast<int>(subset.size());
  if (stages < 1 || stages > n)
    throw ConfigError("infer.stages", "must lie in [1, subset size]");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(stages));
  if (stages == 1) return {subset.back()};
  for (int k = 0; k < stages; ++k) {
    const double pos = static_cast<double>(n - 1) * (stages - 1 - k) / (stages - 1);
    out.push_back(subset[static_cast<size_t>(std::lround(pos))]);
  }
  return out;
}

Mat estimate_x0(const Mat& prediction, const Mat& x_t, int t, const CaptionModel& model) {
  const DiffusionConfig& dc = model.cfg.diffusion;
  const int target = target_timestep(t, dc);
  if (target == 0) return prediction;
  const double a_t = std::sqrt(model.schedule.alpha_bar(t));
  const double b_t = noise_scale(model.schedule, t, dc.noise_coeff);
  const double a_s = std::sqrt(model.schedule.alpha_bar(target));
  const double b_s = noise_scale(model.schedule, target, dc.noise_coeff);
  return (b_t * prediction - b_s * x_t) / (b_t * a_s - b_s * a_t);
}

namespace {

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Mat snap_to_embeddings(const Mat& x0, const EmbeddingTable& table) {
  const auto ids = argmax_ids(x0, table);
  Mat out(x0.rows(), x0.cols());
  for (size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.matrix.row(ids[i]);
  return out;
}

}  // namespace

GenResult generate(const CaptionModel& model, const CondFeatures& cond, const GenConfig& gcfg,
                   std::uint64_t seed) {
  gcfg.validate();
  const int L = model.denoiser.config().L;
  const int D = model.denoiser.config().d_word;
  const NoiseCoeff coeff = model.cfg.diffusion.noise_coeff;
  std::mt19937_64 rng(seed);

  GenResult res;
  res.stage_t = stage_timesteps(model.schedule.step_subset(), gcfg.stages);
  const std::uint64_t calls_before = model.denoiser.forward_calls();

  Mat x = gaussian(rng, L, D);
  Mat x0;
  for (size_t k = 0; k < res.stage_t.size(); ++k) {
    const int t = res.stage_t[k];
    const Mat pred = model.denoiser.guided_forward(x, t, cond, gcfg.w);
    x0 = estimate_x0(pred, x, t, model);
    if (gcfg.reembed_between_stages) x0 = snap_to_embeddings(x0, model.table);
    if (!x0.allFinite()) throw DivergenceError("non-finite latent during generation");
    if (k + 1 == res.stage_t.size()) break;

    const int next = res.stage_t[k + 1];
    const double a_next = std::sqrt(model.schedule.alpha_bar(next));
    const double b_next = noise_scale(model.schedule, next, coeff);
    if (!gcfg.deterministic) {
      x = a_next * x0 + b_next * gaussian(rng, L, D);
    } else if (gcfg.renoise == Renoise::kZero) {
      x = a_next * x0;
    } else {
      const double a_t = std::sqrt(model.schedule.alpha_bar(t));
      const double b_t = noise_scale(model.schedule, t, coeff);
      const Mat eps_hat = (x - a_t * x0) / b_t;
      x = a_next * x0 + b_next * eps_hat;
    }
    if (!x.allFinite()) throw DivergenceError("non-finite latent during generation");
  }

  res.forward_passes = model.denoiser.forward_calls() - calls_before;
  res.final_x0 = x0;
  const PadMask all(static_cast<size_t>(L), true);
  res.words = decode_argmax(x0, model.table, model.vocab, all);
  if (gcfg.dedup) res.words = dedup_consecutive(res.words);
  res.caption = join_words(res.words);
  return res;
}

CondFeatures condition_for(const CaptionRecord& record, const FeatureFile& features) {
  CondFeatures c;
  c.image = features.row(static_cast<std::uint32_t>(record.feature_row));
  return c;
}

EvalReport evaluate(const CaptionModel& model, const std::vector<CaptionRecord>& records,
                    const FeatureFile& features, const GenConfig& gcfg, std::uint64_t seed) {
  if (records.empty()) throw ArgumentError("evaluate: empty dataset");
  EvalReport rep;
  std::vector<std::vector<Sentence>> refs;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const GenResult g = generate(model, condition_for(r, features), gcfg, seed + i);
    std::vector<Sentence> rr;
    for (const auto& c : r.captions) rr.push_back(split_words(c));
    SentenceScore s;
    s.key = r.key;
    s.candidate = g.caption;
    s.bleu4 = bleu4({g.words}, {rr});
    rep.sentences.push_back(std::move(s));
    rep.candidates.push_back(g.words);
    refs.push_back(std::move(rr));
  }
  rep.bleu = corpus_bleu(rep.candidates, refs);
  rep.n = static_cast<long>(records.size());
  return rep;
}

}  // namespace diffcap
