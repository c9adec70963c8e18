// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "diffcap/error.hpp"
#include "diffcap/infer.hpp"

namespace diffcap {

double lr_at(int step, int total_steps, const TrainConfig& cfg) {
  const double frac =
      total_steps <= 0 ? 0.0 : std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  switch (cfg.lr_kind) {
    case LrKind::kConstant:
      return cfg.lr_start;
    case LrKind::kLinear:
      return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac;
    case LrKind::kLog:
      return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, frac);
    case LrKind::kCosine:
      return cfg.lr_end +
             (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
  }
  return cfg.lr_start;
}

double lambda_at(double l_simple_prime, double l_r, const TrainConfig& cfg) {
  if (cfg.lambda_kind == LambdaKind::kConstant) return cfg.lambda_value;
  if (l_r == 0.0) {
    std::cerr << "warning: L_R is zero, dynamic lambda falls back to " << cfg.lambda_value
              << '\n';
    return cfg.lambda_value;
  }
  return l_simple_prime / l_r * cfg.dynamic_C;
}

std::vector<Example> make_examples(const std::vector<CaptionRecord>& records,
                                   const FeatureFile& features, const Vocab& vocab, int L) {
  std::vector<Example> out;
  for (const auto& r : records) {
    std::vector<Sentence> refs;
    for (const auto& c : r.captions) refs.push_back(split_words(c));
    const CondFeatures cond = condition_for(r, features);
    for (const auto& c : r.captions) {
      TokenizedCaption tc = tokenize(c, L, vocab);
      out.push_back(Example{std::move(tc.ids), std::move(tc.mask), cond, refs});
    }
  }
  return out;
}

namespace {

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

ExampleDraw draw_example(const CaptionModel& model, std::mt19937_64& rng, bool guidance,
                         double p_uncond) {
  const auto& subset = model.schedule.step_subset();
  const int L = model.denoiser.config().L;
  const int D = model.denoiser.config().d_word;
  ExampleDraw d;
  std::uniform_int_distribution<size_t> pick(0, subset.size() - 1);
  d.t = subset[pick(rng)];
  if (guidance) d.drop_cond = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p_uncond;
  d.eps = gaussian(rng, L, D);
  if (model.cfg.diffusion.x1_every_step) d.eps1 = gaussian(rng, L, D);
  return d;
}

ExampleLoss example_loss(const CaptionModel& model, const Example& ex, const ExampleDraw& draw,
                         double lambda, ParamSet* grads, Mat* d_embedding, double grad_scale) {
  const DiffusionConfig& dc = model.cfg.diffusion;
  const NoiseSchedule& sched = model.schedule;
  const LatentSeq x0 = embed(ex.ids, model.table, ex.mask);
  const LatentSeq xt = sample_forward(x0, draw.t, draw.eps, sched, dc.noise_coeff);
  const int target_t = target_timestep(draw.t, dc);
  const Mat target =
      target_t == 0 ? x0.values : sample_forward(x0, target_t, draw.eps, sched, dc.noise_coeff).values;
  const CondFeatures cond = draw.drop_cond ? ex.cond.as_null() : ex.cond;
  const bool want_grad = grads != nullptr;

  Denoiser::Trace trace, trace1;
  const Mat pred = model.denoiser.forward(xt.values, draw.t, cond, want_grad ? &trace : nullptr);

  // x_1 restoring pair: a fresh x_1 sample every step, or the main pair when
  // t == 1 happened to be drawn.
  const bool separate_x1 = dc.x1_every_step;
  const bool reuse_x1 = !dc.x1_every_step && draw.t == 1;
  Mat x1, pred1;
  if (separate_x1) {
    x1 = sample_forward(x0, 1, draw.eps1, sched, dc.noise_coeff).values;
    pred1 = model.denoiser.forward(x1, 1, cond, want_grad ? &trace1 : nullptr);
  } else if (reuse_x1) {
    pred1 = pred;
  }

  Mat d_pred, d_pred1, d_round, d_lm;
  ExampleLoss out;
  out.l_simple_prime = simple_prime_loss(pred, target, pred1, x0.values, ex.mask,
                                         want_grad ? &d_pred : nullptr,
                                         want_grad ? &d_pred1 : nullptr);
  out.l_r = rounding_loss(pred, ex.ids, model.table.lm_head(), ex.mask,
                          want_grad ? &d_round : nullptr, d_embedding ? &d_lm : nullptr);
  if (!want_grad) return out;

  Mat d_out = d_pred + lambda * d_round;
  if (reuse_x1) d_out += d_pred1;
  d_out *= grad_scale;
  const Mat d_xt = model.denoiser.backward(trace, d_out, *grads);
  Mat d_x1;
  if (separate_x1) d_x1 = model.denoiser.backward(trace1, grad_scale * d_pred1, *grads);

  if (d_embedding) {
    // x0 reaches the loss through x_t, the regression target, x_1, the x_1
    // target and the lm-head.
    const double a_t = std::sqrt(sched.alpha_bar(draw.t));
    const double a_s = std::sqrt(sched.alpha_bar(target_t));
    Mat d_x0 = a_t * d_xt - grad_scale * a_s * d_pred;
    if (separate_x1) d_x0 += std::sqrt(sched.alpha_bar(1)) * d_x1 - grad_scale * d_pred1;
    if (reuse_x1) d_x0 -= grad_scale * d_pred1;
    for (size_t i = 0; i < ex.ids.size(); ++i)
      d_embedding->row(ex.ids[i]) += d_x0.row(static_cast<Eigen::Index>(i));
    *d_embedding += (grad_scale * lambda) * d_lm;
  }
  return out;
}

namespace {

AdamW::Options adam_options(const TrainConfig& cfg) {
  return {cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
}

ParamSet embedding_set(const CaptionModel& model) {
  ParamSet p;
  p.set("embedding", model.table.matrix);
  return p;
}

}  // namespace

TrainerState::TrainerState(const CaptionModel& model, const TrainConfig& cfg)
    : optimizer(model.denoiser.params(), adam_options(cfg)),
      rng(cfg.seed),
      lambda(cfg.lambda_value),
      grads(model.denoiser.params().zeros_like()) {
  if (!model.table.frozen) embedding_optimizer.emplace(embedding_set(model), adam_options(cfg));
}

StepLog train_step(const std::vector<const Example*>& batch, CaptionModel& model,
                   TrainerState& state) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  const TrainConfig& tc = model.cfg.train;
  const bool trainable = !model.table.frozen;
  state.grads.set_zero();
  Mat d_emb;
  if (trainable) d_emb = Mat::Zero(model.table.matrix.rows(), model.table.matrix.cols());

  const double scale = 1.0 / static_cast<double>(batch.size());
  double ls = 0.0, lr_loss = 0.0;
  for (const Example* ex : batch) {
    const ExampleDraw draw =
        draw_example(model, state.rng, tc.guidance.enabled, tc.guidance.p_uncond);
    const ExampleLoss l = example_loss(model, *ex, draw, state.lambda, &state.grads,
                                       trainable ? &d_emb : nullptr, scale);
    ls += l.l_simple_prime * scale;
    lr_loss += l.l_r * scale;
  }

  StepLog log;
  log.step = state.step;
  log.loss = total_loss(ls, lr_loss, state.lambda);
  log.lr = lr_at(state.step, state.total_steps, tc);

  if (tc.grad_clip > 0.0) {
    const double sq = state.grads.squared_norm() + (trainable ? d_emb.squaredNorm() : 0.0);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
    if (norm > tc.grad_clip) {
      state.grads.scale(tc.grad_clip / norm);
      if (trainable) d_emb *= tc.grad_clip / norm;
    }
  }
  state.optimizer.update(model.denoiser.params(), state.grads, log.lr);
  if (trainable) {
    ParamSet p = embedding_set(model);
    ParamSet g;
    g.set("embedding", std::move(d_emb));
    state.embedding_optimizer->update(p, g, log.lr);
    model.table.matrix = std::move(p.at("embedding"));
  }

  state.lambda = lambda_at(log.loss.l_simple_prime, log.loss.l_r, tc);
  ++state.step;
  return log;
}

std::string metrics_csv_header() {
  return "epoch,lr,lambda,train_l_simple_prime,train_l_r,val_l_simple_prime,val_l_r,bleu4";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,", m.epoch, m.lr, m.lambda,
                m.train_l_simple_prime, m.train_l_r, m.val_l_simple_prime, m.val_l_r);
  std::string row = buf;
  if (m.bleu4) {
    std::snprintf(buf, sizeof buf, "%.9g", *m.bleu4);
    row += buf;
  }
  return row;
}

ExampleLoss mean_loss(const CaptionModel& model, const std::vector<Example>& examples,
                      double lambda, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ExampleLoss acc;
  if (examples.empty()) return acc;
  for (const auto& ex : examples) {
    const ExampleDraw draw = draw_example(model, rng, false, 0.0);
    const ExampleLoss l = example_loss(model, ex, draw, lambda);
    acc.l_simple_prime += l.l_simple_prime;
    acc.l_r += l.l_r;
  }
  acc.l_simple_prime /= static_cast<double>(examples.size());
  acc.l_r /= static_cast<double>(examples.size());
  return acc;
}

namespace {

constexpr std::uint64_t kValSeedSalt = 0x76616c6964617465ull;

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void save_trainer(const TrainerState& st, const std::filesystem::path& dir, int epoch,
                  double best_val, int best_epoch) {
  std::map<std::string, Mat> tensors;
  for (const auto& [n, m] : st.optimizer.first_moment().tensors()) tensors["m." + n] = m;
  for (const auto& [n, m] : st.optimizer.second_moment().tensors()) tensors["v." + n] = m;
  if (st.embedding_optimizer) {
    tensors["m.embedding"] = st.embedding_optimizer->first_moment().at("embedding");
    tensors["v.embedding"] = st.embedding_optimizer->second_moment().at("embedding");
  }
  nlohmann::json meta;
  meta["adam_step"] = st.optimizer.step();
  meta["step"] = st.step;
  meta["total_steps"] = st.total_steps;
  meta["lambda"] = st.lambda;
  meta["rng"] = rng_state(st.rng);
  meta["epoch"] = epoch;
  meta["best_val"] = std::isfinite(best_val) ? nlohmann::json(best_val) : nlohmann::json(nullptr);
  meta["best_epoch"] = best_epoch;
  write_tensor_blob(dir / "optimizer", tensors, meta);
}

struct ResumeInfo {
  int epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
};

ResumeInfo load_trainer(TrainerState& st, const std::filesystem::path& dir) {
  nlohmann::json meta;
  auto tensors = read_tensor_blob(dir / "optimizer", &meta);
  auto restore = [&](ParamSet& dst, const char* prefix) {
    for (auto& [n, m] : dst.tensors()) {
      auto it = tensors.find(prefix + n);
      if (it == tensors.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols())
        throw LoadError(LoadError::Kind::kParse, "optimizer state lacks '" + std::string(prefix) + n + "'");
      m = it->second;
    }
  };
  restore(st.optimizer.first_moment(), "m.");
  restore(st.optimizer.second_moment(), "v.");
  if (st.embedding_optimizer) {
    restore(st.embedding_optimizer->first_moment(), "m.");
    restore(st.embedding_optimizer->second_moment(), "v.");
  }
  ResumeInfo info;
  try {
    st.optimizer.set_step(meta.at("adam_step").get<std::int64_t>());
    if (st.embedding_optimizer) st.embedding_optimizer->set_step(st.optimizer.step());
    st.step = meta.at("step").get<int>();
    st.lambda = meta.at("lambda").get<double>();
    std::istringstream is(meta.at("rng").get<std::string>());
    is >> st.rng;
    info.epoch = meta.at("epoch").get<int>();
    if (!meta.at("best_val").is_null()) info.best_val = meta.at("best_val").get<double>();
    info.best_epoch = meta.at("best_epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::kParse, "bad optimizer metadata: " + std::string(e.what()));
  }
  return info;
}

}  // namespace

FitResult fit(CaptionModel& model, const std::vector<CaptionRecord>& train,
              const std::vector<CaptionRecord>& val, const FeatureFile& features,
              const FitOptions& opts) {
  if (train.empty() || val.empty()) throw ArgumentError("fit: train and val splits must be non-empty");
  const TrainConfig& tc = model.cfg.train;
  const int L = model.denoiser.config().L;
  const std::vector<Example> train_ex = make_examples(train, features, model.vocab, L);
  const std::vector<Example> val_ex = make_examples(val, features, model.vocab, L);
  const int steps_per_epoch =
      static_cast<int>((train_ex.size() + static_cast<size_t>(tc.batch_size) - 1) / tc.batch_size);

  TrainerState state(model, tc);
  state.total_steps = std::max(1, tc.epochs_max * steps_per_epoch);

  FitResult result;
  double best_val = std::numeric_limits<double>::infinity();
  CaptionModel best = model;
  int start_epoch = 1;

  const bool writing = !opts.out_dir.empty();
  const auto ckpt_dir = opts.out_dir / "checkpoints";
  std::ofstream csv;
  if (!opts.resume_from.empty()) {
    // Weights come from the checkpoint; the caller's config stays in force.
    const Config cfg = model.cfg;
    CaptionModel loaded = load_checkpoint(opts.resume_from);
    if (config_to_json(loaded.cfg).at("model") != config_to_json(cfg).at("model") ||
        loaded.table.matrix.rows() != model.table.matrix.rows())
      throw ConfigError("model", "resumed checkpoint has a different architecture");
    model = std::move(loaded);
    model.cfg = cfg;
    const ResumeInfo info = load_trainer(state, opts.resume_from);
    start_epoch = info.epoch + 1;
    best_val = info.best_val;
    result.best_epoch = info.best_epoch;
    const auto best_dir = opts.resume_from.parent_path() / "best";
    best = std::filesystem::exists(best_dir / "model.json") ? load_checkpoint(best_dir) : model;
    best.cfg = cfg;
  }
  if (writing) {
    std::filesystem::create_directories(ckpt_dir);
    const auto path = opts.out_dir / "metrics.csv";
    if (start_epoch > 1 && std::filesystem::exists(path)) {
      csv.open(path, std::ios::binary | std::ios::app);
    } else {
      csv.open(path, std::ios::binary | std::ios::trunc);
      csv << metrics_csv_header() << '\n';
    }
    if (!csv) throw LoadError(LoadError::Kind::kIo, "cannot write " + path.string());
  }

  std::vector<size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), 0);
  const GenConfig gcfg = model.cfg.gen_config();

  for (int epoch = start_epoch; epoch <= tc.epochs_max; ++epoch) {
    std::shuffle(order.begin(), order.end(), state.rng);
    EpochMetrics m;
    m.epoch = epoch;
    int steps = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(tc.batch_size)) {
      std::vector<const Example*> batch;
      for (size_t i = begin; i < std::min(order.size(), begin + tc.batch_size); ++i)
        batch.push_back(&train_ex[order[i]]);
      const StepLog log = train_step(batch, model, state);
      m.train_l_simple_prime += log.loss.l_simple_prime;
      m.train_l_r += log.loss.l_r;
      m.train_total += log.loss.total;
      m.lr = log.lr;
      m.lambda = log.loss.lambda;
      result.steps.push_back(log);
      ++steps;
    }
    m.train_l_simple_prime /= steps;
    m.train_l_r /= steps;
    m.train_total /= steps;

    const ExampleLoss vl = mean_loss(model, val_ex, m.lambda, tc.seed ^ kValSeedSalt);
    m.val_l_simple_prime = vl.l_simple_prime;
    m.val_l_r = vl.l_r;
    m.val_total = total_loss(vl.l_simple_prime, vl.l_r, m.lambda).total;
    if (tc.bleu_every > 0 && (epoch % tc.bleu_every == 0 || epoch == tc.epochs_max))
      m.bleu4 = evaluate(model, val, features, gcfg, tc.seed).bleu.score;

    if (opts.on_epoch_end) opts.on_epoch_end(m);

    if (m.val_total < best_val) {
      best_val = m.val_total;
      best = model;
      result.best_epoch = epoch;
    }
    result.epochs.push_back(m);
    if (writing) {
      csv << metrics_csv_row(m) << '\n';
      csv.flush();
      save_checkpoint(model, ckpt_dir / "last", {{"epoch", epoch}});
      save_trainer(state, ckpt_dir / "last", epoch, best_val, result.best_epoch);
      if (result.best_epoch == epoch) save_checkpoint(model, ckpt_dir / "best", {{"epoch", epoch}});
    }
    if (tc.early_stop && m.val_total > m.train_total && epoch < tc.epochs_max) {
      result.stopped_early = true;
      break;
    }
  }

  if (opts.restore_best && result.best_epoch > 0) model = best;
  if (writing) save_checkpoint(model, ckpt_dir / "final", {{"epoch", result.best_epoch}});
  return result;
}

}  // namespace diffcap
