// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "diffcap/nn.hpp"

namespace diffcap {

// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(const ParamSet& shape_like, Options opts);

  void update(ParamSet& params, const ParamSet& grads, double lr);

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  ParamSet& first_moment() { return m_; }
  ParamSet& second_moment() { return v_; }
  const ParamSet& first_moment() const { return m_; }
  const ParamSet& second_moment() const { return v_; }

 private:
  Options opts_;
  std::int64_t step_ = 0;
  ParamSet m_, v_;
};

// Scales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(ParamSet& grads, double max_norm);

}  // namespace diffcap
