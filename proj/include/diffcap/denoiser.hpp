// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "diffcap/nn.hpp"
#include "diffcap/tensor.hpp"

namespace diffcap {

enum class Fusion { kConcat, kAdd };
Fusion parse_fusion(std::string_view name);
std::string_view to_string(Fusion f);

// Precomputed condition vectors of width D_CLIP. When `is_null` is set every
// condition slot is replaced by its learned null embedding.
struct CondFeatures {
  Vec image;
  std::optional<Vec> text;
  bool is_null = false;

  CondFeatures as_null() const {
    CondFeatures c = *this;
    c.is_null = true;
    return c;
  }
};

struct DenoiserConfig {
  int layers = 4;
  int heads = 2;
  int d_word = 64;
  int d_clip = 16;
  int ff_mult = 4;
  Fusion fusion = Fusion::kConcat;
  int L = 16;
  int vocab = 0;
  // Text condition slot is only used when classifier-free guidance is on.
  bool text_slot = false;

  void validate() const;
};

// Sequence handed to the transformer stack, before the timestep signal.
struct FusedSeq {
  Mat values;
  std::vector<int> discard;  // output rows belonging to condition tokens
};

// Transformer encoder that maps (x_t, t, condition) to a prediction of the
// regression target (x_0 or x_{t-n}). Pre-norm residual blocks, GELU
// feed-forward, learned caption positions, sinusoidal timestep signal added
// at every fused position.
//
// Parameter names (alphabetical in checkpoints):
//   blocks.<i>.attn.{wq,bq,wk,bk,wv,bv,wo,bo}, blocks.<i>.ff.{w1,b1,w2,b2},
//   blocks.<i>.ln1.{g,b}, blocks.<i>.ln2.{g,b}, cond.null_image,
//   cond.null_text, ln_f.{g,b}, out.{w,b}, pos, proj_image.{w1,b1,w2,b2},
//   proj_text.{w1,b1,w2,b2}, seg
class Denoiser {
 public:
  struct Trace;

  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);
  Denoiser(const DenoiserConfig& cfg, ParamSet params);
  Denoiser(const Denoiser& other);
  Denoiser& operator=(const Denoiser& other);

  const DenoiserConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // One D_word row per condition slot (image, then text when active).
  Mat project_condition(const CondFeatures& c) const;

  FusedSeq fuse(const Mat& x_t, const Mat& cond_rows) const;

  // L x D_word prediction. Throws DivergenceError on non-finite output.
  Mat forward(const Mat& x_t, int t, const CondFeatures& c, Trace* trace = nullptr) const;

  // (1 + w) * forward(cond) - w * forward(null); w == 0 is a single pass.
  Mat guided_forward(const Mat& x_t, int t, const CondFeatures& c, double w) const;

  std::vector<Mat> forward_batch(const std::vector<Mat>& x_t, const std::vector<int>& t,
                                 const std::vector<CondFeatures>& c) const;

  // Accumulates parameter gradients for d(loss)/d(output) and returns
  // d(loss)/d(x_t).
  Mat backward(const Trace& trace, const Mat& d_out, ParamSet& grads) const;

  std::uint64_t forward_calls() const { return forward_calls_.load(); }

 private:
  void init_params(std::uint64_t seed);
  int num_slots(const CondFeatures& c) const;

  DenoiserConfig cfg_;
  ParamSet params_;
  mutable std::atomic<std::uint64_t> forward_calls_{0};
};

struct Denoiser::Trace {
  CondFeatures cond;
  int slots = 0;
  Mat image_in, image_hidden_pre;
  Mat text_in, text_hidden_pre;
  struct Block {
    Mat residual_in;
    nn::LayerNormCache ln1, ln2;
    nn::AttentionCache attn;
    Mat after_attn;
    Mat ln2_out, ff_pre;
  };
  std::vector<Block> blocks;
  Mat final_in;
  nn::LayerNormCache ln_f;
  Mat ln_f_out;  // caption rows only
};

}  // namespace diffcap
