// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/denoiser.hpp"

#include <cmath>
#include <random>
#include <string>

#include "diffcap/error.hpp"

namespace diffcap {

namespace {
constexpr int kMinVocab = 4;  // <pad> <bos> <eos> <unk>
}

Fusion parse_fusion(std::string_view name) {
  if (name == "concat") return Fusion::kConcat;
  if (name == "add") return Fusion::kAdd;
  throw ConfigError("model.fusion", "expected concat or add, got '" + std::string(name) + "'");
}

std::string_view to_string(Fusion f) { return f == Fusion::kConcat ? "concat" : "add"; }

void DenoiserConfig::validate() const {
  if (layers < 1) throw ConfigError("model.layers", "must be >= 1");
  if (heads < 1) throw ConfigError("model.heads", "must be >= 1");
  if (d_word < 2) throw ConfigError("model.d_word", "must be >= 2");
  if (d_word % heads != 0) throw ConfigError("model.heads", "must divide model.d_word");
  if (d_clip < 1) throw ConfigError("model.d_clip", "must be >= 1");
  if (ff_mult < 1) throw ConfigError("model.ff_mult", "must be >= 1");
  if (L < 2) throw ConfigError("model.max_len", "must be >= 2");
  if (vocab < kMinVocab) throw ConfigError("model.vocab", "must cover the special tokens");
}

namespace {

std::string block_prefix(int i) { return "blocks." + std::to_string(i) + "."; }

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init_params(seed);
}

Denoiser::Denoiser(const DenoiserConfig& cfg, ParamSet params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  // Shape check against a freshly initialized layout.
  Denoiser reference(cfg_, 0);
  for (const auto& [name, m] : reference.params_.tensors()) {
    if (!params_.contains(name))
      throw LoadError(LoadError::Kind::kParse, "checkpoint lacks parameter '" + name + "'");
    const Mat& got = params_.at(name);
    if (got.rows() != m.rows() || got.cols() != m.cols())
      throw LoadError(LoadError::Kind::kParse, "parameter '" + name + "' has wrong shape");
  }
  for (const auto& [name, _] : params_.tensors())
    if (!reference.params_.contains(name))
      throw LoadError(LoadError::Kind::kParse, "unexpected parameter '" + name + "'");
}

Denoiser::Denoiser(const Denoiser& other) : cfg_(other.cfg_), params_(other.params_) {}

Denoiser& Denoiser::operator=(const Denoiser& other) {
  cfg_ = other.cfg_;
  params_ = other.params_;
  return *this;
}

void Denoiser::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int D = cfg_.d_word;
  const int F = cfg_.ff_mult * D;
  const double resid = 1.0 / std::sqrt(2.0 * cfg_.layers);
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return Mat::Zero(r, c).eval(); };
  auto ones = [](Eigen::Index r, Eigen::Index c) { return Mat::Ones(r, c).eval(); };

  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string b = block_prefix(i);
    for (const char* w : {"wq", "wk", "wv"})
      params_.set(b + "attn." + w, gaussian(rng, D, D, 1.0 / std::sqrt(D)));
    params_.set(b + "attn.wo", gaussian(rng, D, D, resid / std::sqrt(D)));
    for (const char* bias : {"bq", "bk", "bv", "bo"}) params_.set(b + "attn." + bias, zeros(1, D));
    params_.set(b + "ff.w1", gaussian(rng, D, F, 1.0 / std::sqrt(D)));
    params_.set(b + "ff.b1", zeros(1, F));
    params_.set(b + "ff.w2", gaussian(rng, F, D, resid / std::sqrt(F)));
    params_.set(b + "ff.b2", zeros(1, D));
    params_.set(b + "ln1.g", ones(1, D));
    params_.set(b + "ln1.b", zeros(1, D));
    params_.set(b + "ln2.g", ones(1, D));
    params_.set(b + "ln2.b", zeros(1, D));
  }
  params_.set("ln_f.g", ones(1, D));
  params_.set("ln_f.b", zeros(1, D));
  params_.set("out.w", gaussian(rng, D, D, 0.05 / std::sqrt(D)));
  params_.set("out.b", zeros(1, D));
  params_.set("pos", gaussian(rng, cfg_.L, D, 1.0));
  params_.set("cond.null_image", gaussian(rng, 1, D, 0.2));
  params_.set("proj_image.w1", gaussian(rng, cfg_.d_clip, D, 1.0 / std::sqrt(cfg_.d_clip)));
  params_.set("proj_image.b1", zeros(1, D));
  params_.set("proj_image.w2", gaussian(rng, D, D, 1.0 / std::sqrt(D)));
  params_.set("proj_image.b2", zeros(1, D));
  if (cfg_.text_slot) {
    params_.set("cond.null_text", gaussian(rng, 1, D, 0.2));
    params_.set("proj_text.w1", gaussian(rng, cfg_.d_clip, D, 1.0 / std::sqrt(cfg_.d_clip)));
    params_.set("proj_text.b1", zeros(1, D));
    params_.set("proj_text.w2", gaussian(rng, D, D, 1.0 / std::sqrt(D)));
    params_.set("proj_text.b2", zeros(1, D));
  }
  if (cfg_.fusion == Fusion::kConcat) params_.set("seg", gaussian(rng, 2, D, 1.0));
}

int Denoiser::num_slots(const CondFeatures& c) const {
  return 1 + (cfg_.text_slot && c.text.has_value() ? 1 : 0);
}

Mat Denoiser::project_condition(const CondFeatures& c) const {
  const int slots = num_slots(c);
  Mat rows(slots, cfg_.d_word);
  auto mlp = [this](const Vec& in, const std::string& prefix) {
    if (in.size() != cfg_.d_clip)
      throw ArgumentError("condition width " + std::to_string(in.size()) +
                          " does not match model.d_clip " + std::to_string(cfg_.d_clip));
    const Mat x = in.transpose();
    const Mat h = nn::gelu(nn::linear(x, params_.at(prefix + "w1"), params_.at(prefix + "b1")));
    return nn::linear(h, params_.at(prefix + "w2"), params_.at(prefix + "b2"));
  };
  rows.row(0) = c.is_null ? params_.at("cond.null_image") : mlp(c.image, "proj_image.");
  if (slots == 2) rows.row(1) = c.is_null ? params_.at("cond.null_text") : mlp(*c.text, "proj_text.");
  return rows;
}

FusedSeq Denoiser::fuse(const Mat& x_t, const Mat& cond_rows) const {
  if (x_t.rows() != cfg_.L || x_t.cols() != cfg_.d_word)
    throw ArgumentError("fuse: x_t must be L x d_word");
  FusedSeq out;
  const Mat& pos = params_.at("pos");
  if (cfg_.fusion == Fusion::kConcat) {
    const Mat& seg = params_.at("seg");
    out.values.resize(cfg_.L + cond_rows.rows(), cfg_.d_word);
    out.values.topRows(cfg_.L) = x_t + pos;
    out.values.topRows(cfg_.L).rowwise() += seg.row(0);
    for (Eigen::Index j = 0; j < cond_rows.rows(); ++j) {
      out.values.row(cfg_.L + j) = cond_rows.row(j) + seg.row(1);
      out.discard.push_back(static_cast<int>(cfg_.L + j));
    }
  } else {
    out.values = x_t + pos;
    for (Eigen::Index j = 0; j < cond_rows.rows(); ++j) out.values.rowwise() += cond_rows.row(j);
  }
  return out;
}

Mat Denoiser::forward(const Mat& x_t, int t, const CondFeatures& c, Trace* trace) const {
  forward_calls_.fetch_add(1, std::memory_order_relaxed);
  const std::string pi = "proj_image.", pt = "proj_text.";
  const int slots = num_slots(c);

  // Condition projection, recorded for the backward pass.
  Mat cond_rows(slots, cfg_.d_word);
  Mat image_in, image_pre, text_in, text_pre;
  auto mlp = [this](const Vec& in, const std::string& prefix, Mat& x, Mat& pre) {
    if (in.size() != cfg_.d_clip)
      throw ArgumentError("condition width " + std::to_string(in.size()) +
                          " does not match model.d_clip " + std::to_string(cfg_.d_clip));
    x = in.transpose();
    pre = nn::linear(x, params_.at(prefix + "w1"), params_.at(prefix + "b1"));
    return nn::linear(nn::gelu(pre), params_.at(prefix + "w2"), params_.at(prefix + "b2"));
  };
  cond_rows.row(0) = c.is_null ? params_.at("cond.null_image") : mlp(c.image, pi, image_in, image_pre);
  if (slots == 2)
    cond_rows.row(1) = c.is_null ? params_.at("cond.null_text") : mlp(*c.text, pt, text_in, text_pre);

  FusedSeq fused = fuse(x_t, cond_rows);
  Mat h = std::move(fused.values);
  h.rowwise() += nn::timestep_embedding(t, cfg_.d_word);

  if (trace) {
    trace->cond = c;
    trace->slots = slots;
    trace->image_in = std::move(image_in);
    trace->image_hidden_pre = std::move(image_pre);
    trace->text_in = std::move(text_in);
    trace->text_hidden_pre = std::move(text_pre);
    trace->blocks.assign(static_cast<size_t>(cfg_.layers), {});
  }

  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string b = block_prefix(i);
    Trace::Block* tb = trace ? &trace->blocks[static_cast<size_t>(i)] : nullptr;
    nn::LayerNormCache ln1, ln2;
    nn::AttentionCache attn;
    const Mat a = nn::layer_norm(h, params_.at(b + "ln1.g"), params_.at(b + "ln1.b"), tb ? &ln1 : nullptr);
    if (tb) tb->residual_in = h;
    h += nn::self_attention(a, params_, b + "attn.", cfg_.heads, tb ? &attn : nullptr);
    Mat ln2_out = nn::layer_norm(h, params_.at(b + "ln2.g"), params_.at(b + "ln2.b"), tb ? &ln2 : nullptr);
    Mat ff_pre = nn::linear(ln2_out, params_.at(b + "ff.w1"), params_.at(b + "ff.b1"));
    const Mat ff = nn::linear(nn::gelu(ff_pre), params_.at(b + "ff.w2"), params_.at(b + "ff.b2"));
    if (tb) {
      tb->after_attn = h;
      tb->ln1 = std::move(ln1);
      tb->ln2 = std::move(ln2);
      tb->attn = std::move(attn);
      tb->ln2_out = std::move(ln2_out);
      tb->ff_pre = std::move(ff_pre);
    }
    h += ff;
  }

  nn::LayerNormCache ln_f;
  Mat top = h.topRows(cfg_.L);
  Mat normed = nn::layer_norm(top, params_.at("ln_f.g"), params_.at("ln_f.b"), trace ? &ln_f : nullptr);
  Mat out = nn::linear(normed, params_.at("out.w"), params_.at("out.b"));
  if (!out.allFinite()) throw DivergenceError("non-finite denoiser output");
  if (trace) {
    trace->final_in = std::move(top);
    trace->ln_f = std::move(ln_f);
    trace->ln_f_out = std::move(normed);
  }
  return out;
}

Mat Denoiser::guided_forward(const Mat& x_t, int t, const CondFeatures& c, double w) const {
  if (!(w >= 0.0)) throw ArgumentError("guidance weight must be >= 0");
  if (w == 0.0) return forward(x_t, t, c);
  const Mat cond = forward(x_t, t, c);
  const Mat uncond = forward(x_t, t, c.as_null());
  return (1.0 + w) * cond - w * uncond;
}

std::vector<Mat> Denoiser::forward_batch(const std::vector<Mat>& x_t, const std::vector<int>& t,
                                         const std::vector<CondFeatures>& c) const {
  if (x_t.size() != t.size() || x_t.size() != c.size())
    throw ArgumentError("forward_batch: batch size mismatch");
  std::vector<Mat> out;
  out.reserve(x_t.size());
  for (size_t i = 0; i < x_t.size(); ++i) out.push_back(forward(x_t[i], t[i], c[i]));
  return out;
}

Mat Denoiser::backward(const Trace& tr, const Mat& d_out, ParamSet& g) const {
  const int L = cfg_.L;
  const Mat d_normed = nn::linear_backward(tr.ln_f_out, params_.at("out.w"), d_out,
                                           g.at("out.w"), g.at("out.b"));
  Mat d_h = Mat::Zero(L + (cfg_.fusion == Fusion::kConcat ? tr.slots : 0), cfg_.d_word);
  d_h.topRows(L) = nn::layer_norm_backward(tr.ln_f, params_.at("ln_f.g"), d_normed,
                                           g.at("ln_f.g"), g.at("ln_f.b"));

  for (int i = cfg_.layers - 1; i >= 0; --i) {
    const std::string b = block_prefix(i);
    const Trace::Block& tb = tr.blocks[static_cast<size_t>(i)];
    const Mat d_act = nn::linear_backward(nn::gelu(tb.ff_pre), params_.at(b + "ff.w2"), d_h,
                                          g.at(b + "ff.w2"), g.at(b + "ff.b2"));
    const Mat d_pre = nn::gelu_backward(tb.ff_pre, d_act);
    const Mat d_ln2 = nn::linear_backward(tb.ln2_out, params_.at(b + "ff.w1"), d_pre,
                                          g.at(b + "ff.w1"), g.at(b + "ff.b1"));
    d_h += nn::layer_norm_backward(tb.ln2, params_.at(b + "ln2.g"), d_ln2, g.at(b + "ln2.g"),
                                   g.at(b + "ln2.b"));
    const Mat d_a = nn::self_attention_backward(tb.attn, params_, b + "attn.", cfg_.heads, d_h, g);
    d_h += nn::layer_norm_backward(tb.ln1, params_.at(b + "ln1.g"), d_a, g.at(b + "ln1.g"),
                                   g.at(b + "ln1.b"));
  }

  // Undo fusion.
  Mat d_xt;
  Mat d_cond(tr.slots, cfg_.d_word);
  if (cfg_.fusion == Fusion::kConcat) {
    d_xt = d_h.topRows(L);
    g.at("seg").row(0) += d_xt.colwise().sum();
    for (int j = 0; j < tr.slots; ++j) {
      d_cond.row(j) = d_h.row(L + j);
      g.at("seg").row(1) += d_cond.row(j);
    }
  } else {
    d_xt = d_h;
    const RowVec total = d_h.colwise().sum();
    for (int j = 0; j < tr.slots; ++j) d_cond.row(j) = total;
  }
  g.at("pos") += d_xt;

  auto mlp_backward = [&](const Mat& x, const Mat& pre, const std::string& prefix, const Mat& dy) {
    const Mat d_hidden = nn::linear_backward(nn::gelu(pre), params_.at(prefix + "w2"), dy,
                                             g.at(prefix + "w2"), g.at(prefix + "b2"));
    nn::linear_backward(x, params_.at(prefix + "w1"), nn::gelu_backward(pre, d_hidden),
                        g.at(prefix + "w1"), g.at(prefix + "b1"));
  };
  if (tr.cond.is_null) {
    g.at("cond.null_image") += d_cond.row(0);
    if (tr.slots == 2) g.at("cond.null_text") += d_cond.row(1);
  } else {
    mlp_backward(tr.image_in, tr.image_hidden_pre, "proj_image.", d_cond.row(0));
    if (tr.slots == 2) mlp_backward(tr.text_in, tr.text_hidden_pre, "proj_text.", d_cond.row(1));
  }
  return d_xt;
}

}  // namespace diffcap
