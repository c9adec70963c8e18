// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/nn.hpp"

#include <cmath>
#include <numbers>

#include "diffcap/error.hpp"

namespace diffcap {

Mat& ParamSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

const Mat& ParamSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, m] : tensors_) out.tensors_[name] = Mat::Zero(m.rows(), m.cols());
  return out;
}

void ParamSet::set_zero() {
  for (auto& [_, m] : tensors_) m.setZero();
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& [_, m] : tensors_) s += m.squaredNorm();
  return s;
}

void ParamSet::scale(double factor) {
  for (auto& [_, m] : tensors_) m *= factor;
}

size_t ParamSet::num_scalars() const {
  size_t n = 0;
  for (const auto& [_, m] : tensors_) n += static_cast<size_t>(m.size());
  return n;
}

namespace nn {

Mat linear(const Mat& x, const Mat& W, const Mat& b) {
  Mat y = x * W;
  y.rowwise() += b.row(0);
  return y;
}

Mat linear_backward(const Mat& x, const Mat& W, const Mat& dy, Mat& dW, Mat& db) {
  dW.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  return dy * W.transpose();
}

namespace {
constexpr double kLayerNormEps = 1e-5;
}

Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  Mat xhat(n, x.cols());
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const RowVec centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / d;
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * inv_std(i);
  }
  Mat y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const LayerNormCache& cache, const Mat& gamma, const Mat& dy,
                        Mat& dgamma, Mat& dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double s1 = dxhat.row(i).sum();
    const double s2 = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) *
                (d * dxhat.row(i).array() - s1 - cache.xhat.row(i).array() * s2).matrix();
  }
  return dx;
}

namespace {
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v)));
  });
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  Mat g = x.unaryExpr([](double v) {
    const double th = std::tanh(kGeluK * (v + kGeluC * v * v * v));
    return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
  });
  return g.cwiseProduct(dy);
}

Mat self_attention(const Mat& x, const ParamSet& p, const std::string& prefix, int heads,
                   AttentionCache* cache) {
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat q = linear(x, p.at(prefix + "wq"), p.at(prefix + "bq"));
  Mat k = linear(x, p.at(prefix + "wk"), p.at(prefix + "bk"));
  Mat v = linear(x, p.at(prefix + "wv"), p.at(prefix + "bv"));
  Mat mixed(x.rows(), d);
  std::vector<Mat> probs(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    Mat s = (qh * kh.transpose()) * scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    mixed.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    probs[static_cast<size_t>(h)] = std::move(s);
  }
  Mat y = linear(mixed, p.at(prefix + "wo"), p.at(prefix + "bo"));
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->mixed = std::move(mixed);
    cache->probs = std::move(probs);
  }
  return y;
}

Mat self_attention_backward(const AttentionCache& c, const ParamSet& p,
                            const std::string& prefix, int heads, const Mat& dy,
                            ParamSet& grads) {
  const Eigen::Index d = c.x.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat dmixed = linear_backward(c.mixed, p.at(prefix + "wo"), dy,
                                     grads.at(prefix + "wo"), grads.at(prefix + "bo"));
  Mat dq(c.x.rows(), d), dk(c.x.rows(), d), dv(c.x.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Mat& P = c.probs[static_cast<size_t>(h)];
    const auto dout = dmixed.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = P.transpose() * dout;
    const Mat dP = dout * c.v.middleCols(h * dh, dh).transpose();
    Mat dS = P.cwiseProduct(dP);
    const Vec row_dot = dS.rowwise().sum();
    dS -= P.cwiseProduct(row_dot.replicate(1, P.cols()));
    dS *= scale;
    dq.middleCols(h * dh, dh).noalias() = dS * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dS.transpose() * c.q.middleCols(h * dh, dh);
  }
  Mat dx = linear_backward(c.x, p.at(prefix + "wq"), dq, grads.at(prefix + "wq"),
                           grads.at(prefix + "bq"));
  dx += linear_backward(c.x, p.at(prefix + "wk"), dk, grads.at(prefix + "wk"),
                        grads.at(prefix + "bk"));
  dx += linear_backward(c.x, p.at(prefix + "wv"), dv, grads.at(prefix + "wv"),
                        grads.at(prefix + "bv"));
  return dx;
}

RowVec timestep_embedding(int t, int dim) {
  RowVec out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    out(2 * i) = std::sin(t * freq);
    out(2 * i + 1) = std::cos(t * freq);
  }
  if (dim % 2 == 1) out(dim - 1) = 0.0;
  return out;
}

}  // namespace nn
}  // namespace diffcap
