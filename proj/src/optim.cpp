// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/optim.hpp"

#include <cmath>

namespace diffcap {

AdamW::AdamW(const ParamSet& shape_like, Options opts)
    : opts_(opts), m_(shape_like.zeros_like()), v_(shape_like.zeros_like()) {}

void AdamW::update(ParamSet& params, const ParamSet& grads, double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (auto& [name, p] : params.tensors()) {
    const Mat& g = grads.at(name);
    Mat& m = m_.at(name);
    Mat& v = v_.at(name);
    m = opts_.beta1 * m + (1.0 - opts_.beta1) * g;
    v = opts_.beta2 * v + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    const auto mhat = m.array() / bc1;
    const auto vhat = v.array() / bc2;
    p.array() -= lr * (mhat / (vhat.sqrt() + opts_.eps) + opts_.weight_decay * p.array());
  }
}

double clip_global_norm(ParamSet& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace diffcap
