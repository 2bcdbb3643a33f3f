#pragma once

#include <string>
#include <utility>

#include "stutternet/error.hpp"
#include "stutternet/nn/parameter.hpp"

namespace stutternet::nn {

/// Affine layer y = x W + b with W stored in_dim x out_dim.
template <class T>
class Dense {
 public:
  Dense(std::string name, int in_dim, int out_dim)
      : weight(name + ".weight", in_dim, out_dim), bias(name + ".bias", 1, out_dim), name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }

  void initialize(Rng& rng) {
    glorot_uniform(weight.value, in_dim(), out_dim(), rng);
    bias.value.setZero();
  }

  Matrix<T> infer(const Matrix<T>& x) const {
    check(x);
    return (x * weight.value).rowwise() + bias.value.row(0);
  }

  Matrix<T> forward(const Matrix<T>& x) {
    check(x);
    input_ = x;
    return (x * weight.value).rowwise() + bias.value.row(0);
  }

  Matrix<T> backward(const Matrix<T>& dy) {
    weight.grad.noalias() += input_.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  void check(const Matrix<T>& x) const {
    if (x.cols() != in_dim()) {
      throw ShapeError(name_ + ": expected " + std::to_string(in_dim()) + " inputs, got " + std::to_string(x.cols()));
    }
  }

  std::string name_;
  Matrix<T> input_;
};

}  // namespace stutternet::nn
