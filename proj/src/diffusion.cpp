// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "diffcap/error.hpp"

namespace diffcap {

PredictionMode parse_prediction_mode(std::string_view name) {
  if (name == "x0") return PredictionMode::kX0;
  if (name == "x_t_minus_n") return PredictionMode::kXtMinusN;
  throw ConfigError("diffusion.mode", "expected x0 or x_t_minus_n, got '" +
                                          std::string(name) + "'");
}

NoiseCoeff parse_noise_coeff(std::string_view name) {
  if (name == "sqrt") return NoiseCoeff::kSqrt;
  if (name == "linear") return NoiseCoeff::kLinear;
  throw ConfigError("diffusion.noise_coeff", "expected sqrt or linear, got '" +
                                                 std::string(name) + "'");
}

std::string_view to_string(PredictionMode mode) {
  return mode == PredictionMode::kX0 ? "x0" : "x_t_minus_n";
}

std::string_view to_string(NoiseCoeff coeff) {
  return coeff == NoiseCoeff::kSqrt ? "sqrt" : "linear";
}

double noise_scale(const NoiseSchedule& schedule, int t, NoiseCoeff coeff) {
  const double one_minus = 1.0 - schedule.alpha_bar(t);
  return coeff == NoiseCoeff::kSqrt ? std::sqrt(one_minus) : one_minus;
}

int target_timestep(int t, const DiffusionConfig& cfg) {
  if (cfg.mode == PredictionMode::kX0) return 0;
  return std::max(t - cfg.n, 0);
}

LatentSeq sample_forward(const LatentSeq& x0, int t, const Mat& eps,
                         const NoiseSchedule& schedule, NoiseCoeff coeff) {
  if (t < 0 || t > schedule.T())
    throw ArgumentError("sample_forward: timestep out of range: " + std::to_string(t));
  if (eps.rows() != x0.values.rows() || eps.cols() != x0.values.cols())
    throw ArgumentError("sample_forward: noise shape mismatch");
  LatentSeq out;
  out.t = t;
  out.pad_mask = x0.pad_mask;
  if (t == 0) {
    out.values = x0.values;
    return out;
  }
  const double signal = std::sqrt(schedule.alpha_bar(t));
  const double noise = noise_scale(schedule, t, coeff);
  out.values = signal * x0.values + noise * eps;
  return out;
}

Mat posterior_mean(const LatentSeq& xt, const LatentSeq& x0, int t,
                   const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T())
    throw ArgumentError("posterior_mean: timestep out of range: " + std::to_string(t));
  if (xt.values.rows() != x0.values.rows() || xt.values.cols() != x0.values.cols())
    throw ArgumentError("posterior_mean: shape mismatch");
  if (t == 1) return x0.values;  // alpha_bar(0) == 1 collapses the coefficients
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double beta = schedule.beta(t);
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
  const double ct = std::sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab_t);
  return c0 * x0.values + ct * xt.values;
}

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError(std::string(what) + ": shape mismatch");
}

double masked_l1(const Mat& pred, const Mat& target, const PadMask& mask, Mat* grad) {
  size_t count = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) count += mask[i] ? 1 : 0;
  if (grad) grad->setZero(pred.rows(), pred.cols());
  if (count == 0) return 0.0;
  const double denom = static_cast<double>(count) * static_cast<double>(pred.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (!mask[i]) continue;
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      const double d = pred(i, j) - target(i, j);
      sum += std::abs(d);
      if (grad) (*grad)(i, j) = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / denom;
    }
  }
  return sum / denom;
}

}  // namespace

double simple_prime_loss(const Mat& pred, const Mat& target, const Mat& pred1,
                         const Mat& target1, const PadMask& mask, Mat* d_pred,
                         Mat* d_pred1) {
  check_same_shape(pred, target, "simple_prime_loss");
  if (static_cast<Eigen::Index>(mask.size()) != pred.rows())
    throw ArgumentError("simple_prime_loss: mask length mismatch");
  double loss = masked_l1(pred, target, mask, d_pred);
  if (pred1.size() > 0) {
    check_same_shape(pred1, target1, "simple_prime_loss");
    check_same_shape(pred1, pred, "simple_prime_loss");
    loss += masked_l1(pred1, target1, mask, d_pred1);
  } else if (d_pred1) {
    d_pred1->resize(0, 0);
  }
  return loss;
}

double rounding_loss(const Mat& pred_x0, const std::vector<int>& tokens,
                     const Mat& lm_head, const PadMask& mask, Mat* d_pred,
                     Mat* d_lm_head) {
  const Eigen::Index L = pred_x0.rows();
  const Eigen::Index vocab = lm_head.rows();
  if (static_cast<Eigen::Index>(tokens.size()) != L ||
      static_cast<Eigen::Index>(mask.size()) != L)
    throw ArgumentError("rounding_loss: token/mask length mismatch");
  if (lm_head.cols() != pred_x0.cols())
    throw ArgumentError("rounding_loss: lm_head width mismatch");
  for (int id : tokens)
    if (id < 0 || id >= vocab)
      throw ArgumentError("rounding_loss: token id out of range: " + std::to_string(id));

  if (d_pred) d_pred->setZero(L, pred_x0.cols());
  if (d_lm_head) d_lm_head->setZero(vocab, lm_head.cols());

  size_t count = 0;
  for (Eigen::Index i = 0; i < L; ++i) count += mask[i] ? 1 : 0;
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);

  double loss = 0.0;
  Vec logits(vocab);
  for (Eigen::Index i = 0; i < L; ++i) {
    if (!mask[i]) continue;
    logits.noalias() = lm_head * pred_x0.row(i).transpose();
    const double mx = logits.maxCoeff();
    Vec prob = (logits.array() - mx).exp();
    const double z = prob.sum();
    loss += (std::log(z) + mx - logits(tokens[i])) * inv;
    if (d_pred || d_lm_head) {
      prob /= z;
      prob(tokens[i]) -= 1.0;
      prob *= inv;
      if (d_pred) d_pred->row(i).noalias() = prob.transpose() * lm_head;
      if (d_lm_head) d_lm_head->noalias() += prob * pred_x0.row(i);
    }
  }
  return loss;
}

LossBreakdown total_loss(double l_simple_prime, double l_r, double lambda) {
  if (!std::isfinite(l_simple_prime) || !std::isfinite(l_r) || !std::isfinite(lambda))
    throw DivergenceError("non-finite loss term");
  if (lambda < 0.0) throw ArgumentError("total_loss: lambda must be >= 0");
  LossBreakdown out;
  out.l_simple_prime = l_simple_prime;
  out.l_r = l_r;
  out.lambda = lambda;
  out.total = l_simple_prime + lambda * l_r;
  return out;
}

}  // namespace diffcap
