#pragma once

#include <string>
#include <utility>

#include "stutternet/error.hpp"
#include "stutternet/nn/parameter.hpp"

namespace stutternet::nn {

/// Per-channel batch normalisation over every row of the input, i.e. over
/// batch x time for sequence activations and over the batch for FC ones.
/// Train mode normalises with the biased batch variance and folds the batch
/// mean and unbiased variance into the running statistics.
template <class T>
class BatchNorm {
 public:
  BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5)
      : gamma(name + ".gamma", 1, channels),
        beta(name + ".beta", 1, channels),
        running_mean(name + ".running_mean", 1, channels, T(0)),
        running_var(name + ".running_var", 1, channels, T(1)),
        name_(std::move(name)),
        momentum_(momentum),
        eps_(eps) {
    gamma.value.setOnes();
  }

  const std::string& name() const { return name_; }
  int channels() const { return static_cast<int>(gamma.value.cols()); }

  /// Eval mode. Before any training step the running stats are (0, 1).
  Matrix<T> infer(const Matrix<T>& x) const {
    check(x);
    const RowVector<T> scale =
        (gamma.value.row(0).array() / (running_var.value.row(0).array() + T(eps_)).sqrt()).matrix();
    const RowVector<T> shift = beta.value.row(0) - (running_mean.value.row(0).array() * scale.array()).matrix();
    return (x.array().rowwise() * scale.array()).rowwise() + shift.array();
  }

  Matrix<T> forward(const Matrix<T>& x) {
    check(x);
    const Eigen::Index n = x.rows();
    if (n < 2) throw ShapeError(name_ + ": train mode needs at least 2 rows for a variance");

    const RowVector<T> mean = x.colwise().mean();
    Matrix<T> centred = x.rowwise() - mean;
    const RowVector<T> var = centred.array().square().colwise().sum().matrix() / static_cast<T>(n);
    inv_std_ = (var.array() + T(eps_)).rsqrt().matrix();
    normalized_ = centred.array().rowwise() * inv_std_.array();

    const T m = static_cast<T>(momentum_);
    running_mean.value.row(0) = (T(1) - m) * running_mean.value.row(0) + m * mean;
    running_var.value.row(0) =
        (T(1) - m) * running_var.value.row(0) + m * var * (static_cast<T>(n) / static_cast<T>(n - 1));

    return (normalized_.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
  }

  Matrix<T> backward(const Matrix<T>& dy) {
    if (dy.rows() != normalized_.rows() || dy.cols() != normalized_.cols()) {
      throw ShapeError(name_ + ": gradient shape mismatch");
    }
    const T n = static_cast<T>(dy.rows());
    gamma.grad.row(0) += (dy.array() * normalized_.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();

    // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    const Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const RowVector<T> sum_dxhat = dxhat.colwise().sum();
    const RowVector<T> sum_dxhat_xhat = (dxhat.array() * normalized_.array()).colwise().sum().matrix();
    Matrix<T> dx = (dxhat.array() * n).matrix();
    dx.rowwise() -= sum_dxhat;
    dx.array() -= normalized_.array().rowwise() * sum_dxhat_xhat.array();
    dx.array().rowwise() *= (inv_std_.array() / n);
    return dx;
  }

  Parameter<T> gamma;
  Parameter<T> beta;
  Buffer<T> running_mean;
  Buffer<T> running_var;

 private:
  void check(const Matrix<T>& x) const {
    if (x.cols() != channels()) {
      throw ShapeError(name_ + ": expected " + std::to_string(channels()) + " channels, got " +
                       std::to_string(x.cols()));
    }
  }

  std::string name_;
  double momentum_;
  double eps_;
  Matrix<T> normalized_;
  RowVector<T> inv_std_;
};

}  // namespace stutternet::nn
