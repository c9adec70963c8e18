// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffcap/tensor.hpp"

namespace diffcap {

// Named parameter tensors, iterated in alphabetical order. Vectors are stored
// as 1 x n matrices.
class ParamSet {
 public:
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  void set(const std::string& name, Mat value) { tensors_[name] = std::move(value); }
  void erase(const std::string& name) { tensors_.erase(name); }

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void set_zero();
  double squared_norm() const;
  void scale(double factor);
  size_t num_scalars() const;

  std::map<std::string, Mat>& tensors() { return tensors_; }
  const std::map<std::string, Mat>& tensors() const { return tensors_; }

 private:
  std::map<std::string, Mat> tensors_;
};

namespace nn {

// y = x * W + b, W is in x out, b is 1 x out.
Mat linear(const Mat& x, const Mat& W, const Mat& b);
// Accumulates into dW/db; returns dx.
Mat linear_backward(const Mat& x, const Mat& W, const Mat& dy, Mat& dW, Mat& db);

struct LayerNormCache {
  Mat xhat;
  Vec inv_std;
};
Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache* cache);
Mat layer_norm_backward(const LayerNormCache& cache, const Mat& gamma, const Mat& dy,
                        Mat& dgamma, Mat& dbeta);

// tanh approximation
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& dy);

struct AttentionCache {
  Mat x, q, k, v, mixed;
  std::vector<Mat> probs;  // one seq x seq matrix per head
};

// Multi-head self-attention over all rows. Parameters under `prefix`:
// wq, bq, wk, bk, wv, bv, wo, bo.
Mat self_attention(const Mat& x, const ParamSet& p, const std::string& prefix, int heads,
                   AttentionCache* cache);
Mat self_attention_backward(const AttentionCache& cache, const ParamSet& p,
                            const std::string& prefix, int heads, const Mat& dy,
                            ParamSet& grads);

// Fixed sinusoidal embedding of a scalar timestep (width `dim`).
RowVec timestep_embedding(int t, int dim);

}  // namespace nn
}  // namespace diffcap
