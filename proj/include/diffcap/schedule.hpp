// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace diffcap {

enum class ScheduleKind { kLinear, kCosine };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kLinear;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int subset_count = 100;
};

// Variance schedule of the forward noising chain. Timesteps are 1-based:
// t in [1, T]; t = 0 denotes clean data and alpha_bar(0) == 1.
// Immutable once built.
class NoiseSchedule {
 public:
  ScheduleKind kind() const { return kind_; }
  int T() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const;
  double alpha(int t) const;
  // Accepts t in [0, T].
  double alpha_bar(int t) const;

  // Index 0 holds t = 1.
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  // Accelerated subset {s_1 < ... < s_N = T}.
  const std::vector<int>& step_subset() const { return step_subset_; }
  void set_step_subset(std::vector<int> subset);

 private:
  friend NoiseSchedule build_schedule(ScheduleKind, int, double, double);

  ScheduleKind kind_ = ScheduleKind::kLinear;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<int> step_subset_;
};

// Linear spacing of betas from beta_start to beta_end inclusive, or the
// squared-cosine alpha_bar curve (offset 0.008, beta clipped at 0.999).
// The returned schedule carries the identity subset {1..T}.
NoiseSchedule build_schedule(ScheduleKind kind, int T, double beta_start,
                             double beta_end);

// Builds the schedule and installs the evenly spaced subset of
// `cfg.subset_count` steps.
NoiseSchedule build_schedule(const ScheduleConfig& cfg);

// Evenly spaced timesteps round(k * T / count), k = 1..count.
std::vector<int> make_step_subset(const NoiseSchedule& schedule, int count);

}  // namespace diffcap
