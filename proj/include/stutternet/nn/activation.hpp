#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "stutternet/error.hpp"
#include "stutternet/matrix.hpp"
#include "stutternet/rng.hpp"

namespace stutternet::nn {

template <class T>
class Relu {
 public:
  static Matrix<T> infer(const Matrix<T>& x) { return x.cwiseMax(T(0)); }

  Matrix<T> forward(const Matrix<T>& x) {
    mask_ = (x.array() > T(0)).template cast<T>();
    return x.cwiseMax(T(0));
  }

  Matrix<T> backward(const Matrix<T>& dy) const { return dy.cwiseProduct(mask_); }

 private:
  Matrix<T> mask_;
};

/// Inverted dropout: train mode keeps each unit with probability 1 - p and
/// scales survivors by 1 / (1 - p); eval mode is the identity.
template <class T>
class Dropout {
 public:
  explicit Dropout(double p = 0.2) : p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  }

  double probability() const { return p_; }

  Matrix<T> forward(const Matrix<T>& x, Rng& rng) {
    const T scale = static_cast<T>(1.0 / (1.0 - p_));
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = rng.uniform() < p_ ? T(0) : scale;
    return x.cwiseProduct(mask_);
  }

  Matrix<T> backward(const Matrix<T>& dy) const { return dy.cwiseProduct(mask_); }

 private:
  double p_;
  Matrix<T> mask_;
};

/// Row-wise softmax with max subtraction.
template <class T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <class T>
struct LossResult {
  double loss = 0.0;   // mean over the batch of -log p[label]
  Matrix<T> d_logits;  // (softmax - onehot) / B
  Matrix<T> probabilities;
};

template <class T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels) {
  const Eigen::Index batch = logits.rows();
  if (static_cast<Eigen::Index>(labels.size()) != batch) throw ShapeError("softmax_xent: label count != batch size");
  LossResult<T> out;
  out.probabilities = softmax(logits);
  out.d_logits = out.probabilities;
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= logits.cols()) throw UsageError("softmax_xent: label " + std::to_string(y) + " out of range");
    // log-sum-exp form stays finite when the label's probability underflows.
    const double mx = static_cast<double>(logits.row(b).maxCoeff());
    double se = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) se += std::exp(static_cast<double>(logits(b, k)) - mx);
    total += mx + std::log(se) - static_cast<double>(logits(b, y));
    out.d_logits(b, y) -= T(1);
  }
  out.d_logits /= static_cast<T>(batch);
  out.loss = batch > 0 ? total / static_cast<double>(batch) : 0.0;
  return out;
}

}  // namespace stutternet::nn
