// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "diffcap/error.hpp"

namespace diffcap {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw ConfigError("schedule.kind", "expected linear or cosine, got '" +
                                         std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T()) throw ArgumentError("timestep out of range: " + std::to_string(t));
  return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > T()) throw ArgumentError("timestep out of range: " + std::to_string(t));
  return alphas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T()) throw ArgumentError("timestep out of range: " + std::to_string(t));
  return alpha_bars_[t - 1];
}

void NoiseSchedule::set_step_subset(std::vector<int> subset) {
  if (subset.empty() || subset.back() != T())
    throw ArgumentError("step subset must end at T");
  for (size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] < 1 || subset[i] > T() || (i > 0 && subset[i] <= subset[i - 1]))
      throw ArgumentError("step subset must be strictly increasing within [1, T]");
  }
  step_subset_ = std::move(subset);
}

NoiseSchedule build_schedule(ScheduleKind kind, int T, double beta_start,
                             double beta_end) {
  if (T < 1) throw ConfigError("schedule.T", "must be >= 1");
  NoiseSchedule s;
  s.kind_ = kind;
  s.betas_.resize(T);

  if (kind == ScheduleKind::kLinear) {
    if (!(beta_start > 0.0 && beta_start < 1.0))
      throw ConfigError("schedule.beta_start", "must lie in (0, 1)");
    if (!(beta_end >= beta_start && beta_end < 1.0))
      throw ConfigError("schedule.beta_end", "must lie in [beta_start, 1)");
    for (int i = 0; i < T; ++i) {
      const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
      s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
    }
    s.betas_[T - 1] = beta_end;
  } else {
    constexpr double kOffset = 0.008;
    auto f = [T](int t) {
      const double x = (static_cast<double>(t) / T + kOffset) / (1.0 + kOffset);
      const double c = std::cos(x * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0);
    for (int t = 1; t <= T; ++t) {
      const double ab_t = f(t) / f0;
      const double ab_prev = f(t - 1) / f0;
      s.betas_[t - 1] = std::min(1.0 - ab_t / ab_prev, 0.999);
    }
  }

  s.alphas_.resize(T);
  s.alpha_bars_.resize(T);
  double running = 1.0;
  for (int i = 0; i < T; ++i) {
    s.alphas_[i] = 1.0 - s.betas_[i];
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
  }

  s.step_subset_.resize(T);
  for (int i = 0; i < T; ++i) s.step_subset_[i] = i + 1;
  return s;
}

NoiseSchedule build_schedule(const ScheduleConfig& cfg) {
  NoiseSchedule s = build_schedule(cfg.kind, cfg.T, cfg.beta_start, cfg.beta_end);
  if (cfg.subset_count < 1 || cfg.subset_count > cfg.T)
    throw ConfigError("schedule.subset_count", "must lie in [1, T]");
  s.set_step_subset(make_step_subset(s, cfg.subset_count));
  return s;
}

std::vector<int> make_step_subset(const NoiseSchedule& schedule, int count) {
  const long T = schedule.T();
  if (count < 1 || count > T)
    throw ConfigError("schedule.subset_count", "must lie in [1, T], got " +
                                                   std::to_string(count));
  std::vector<int> out(count);
  for (long k = 1; k <= count; ++k) {
    // round-half-up of k*T/count in integer arithmetic
    out[k - 1] = static_cast<int>((2 * k * T + count) / (2 * count));
  }
  return out;
}

}  // namespace diffcap
