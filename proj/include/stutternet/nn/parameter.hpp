#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "stutternet/matrix.hpp"
#include "stutternet/rng.hpp"

namespace stutternet::nn {

enum class Mode { train, eval };

/// Trainable tensor and its accumulated gradient (same shape).
template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// Non-trainable state saved with the model (batch-norm running statistics).
template <class T>
struct Buffer {
  std::string name;
  Matrix<T> value;

  Buffer(std::string n, Eigen::Index rows, Eigen::Index cols, T fill)
      : name(std::move(n)), value(Matrix<T>::Constant(rows, cols, fill)) {}
};

/// Glorot-uniform fill in +-sqrt(6 / (fan_in + fan_out)).
template <class T>
void glorot_uniform(Matrix<T>& w, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace stutternet::nn
