// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>
#include <vector>

#include "diffcap/schedule.hpp"
#include "diffcap/tensor.hpp"

namespace diffcap {

// true marks a real (non-pad) position.
using PadMask = std::vector<bool>;

// L x D_word caption embeddings at diffusion timestep t.
struct LatentSeq {
  Mat values;
  int t = 0;
  PadMask pad_mask;
};

struct LossBreakdown {
  double l_simple_prime = 0.0;
  double l_r = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

enum class PredictionMode { kX0, kXtMinusN };
enum class NoiseCoeff { kSqrt, kLinear };

PredictionMode parse_prediction_mode(std::string_view name);
NoiseCoeff parse_noise_coeff(std::string_view name);
std::string_view to_string(PredictionMode mode);
std::string_view to_string(NoiseCoeff coeff);

struct DiffusionConfig {
  PredictionMode mode = PredictionMode::kX0;
  int n = 100;
  NoiseCoeff noise_coeff = NoiseCoeff::kSqrt;
  bool x1_every_step = true;
};

// sqrt(1 - alpha_bar_t), or (1 - alpha_bar_t) under NoiseCoeff::kLinear.
double noise_scale(const NoiseSchedule& schedule, int t, NoiseCoeff coeff);

// Timestep whose latent the model regresses on when fed x_t.
int target_timestep(int t, const DiffusionConfig& cfg);

// sqrt(alpha_bar_t) * x0 + noise_scale(t) * eps. t = 0 returns x0 unchanged.
LatentSeq sample_forward(const LatentSeq& x0, int t, const Mat& eps,
                         const NoiseSchedule& schedule,
                         NoiseCoeff coeff = NoiseCoeff::kSqrt);

// Mean of q(x_{t-1} | x_t, x_0).
Mat posterior_mean(const LatentSeq& xt, const LatentSeq& x0, int t,
                   const NoiseSchedule& schedule);

// Mean-L1 over unmasked positions of (pred, target) plus the same for the
// x1-restoring pair. An empty `pred1` drops the second term. Gradients are
// written when the out-pointers are non-null.
double simple_prime_loss(const Mat& pred, const Mat& target, const Mat& pred1,
                         const Mat& target1, const PadMask& mask,
                         Mat* d_pred = nullptr, Mat* d_pred1 = nullptr);

// Mean over unmasked positions of -log softmax(lm_head * pred[i])[token_i].
// lm_head is vocab x D_word.
double rounding_loss(const Mat& pred_x0, const std::vector<int>& tokens,
                     const Mat& lm_head, const PadMask& mask,
                     Mat* d_pred = nullptr, Mat* d_lm_head = nullptr);

LossBreakdown total_loss(double l_simple_prime, double l_r, double lambda);

}  // namespace diffcap
