#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stutternet/error.hpp"
#include "stutternet/matrix.hpp"

namespace stutternet::nn {

/// Statistics pooling: per-channel mean and standard deviation over time,
/// concatenated as [mean | std]. Variance is biased (1/T) with kVarianceEps
/// inside the square root.
///
/// Sums are taken over sorted values, so the result does not depend on the
/// order of the frames at all (bitwise).
template <class T>
class StatsPool {
 public:
  static constexpr double kVarianceEps = 1e-10;

  Matrix<T> infer(const Matrix<T>& x, int batch) const {
    Matrix<T> mean, sd;
    return pool(x, batch, mean, sd);
  }

  Matrix<T> forward(const Matrix<T>& x, int batch) {
    input_ = x;
    batch_ = batch;
    return pool(x, batch, mean_, std_);
  }

  Matrix<T> backward(const Matrix<T>& dy) {
    const Eigen::Index channels = input_.cols();
    if (dy.rows() != batch_ || dy.cols() != 2 * channels) throw ShapeError("stats_pool: gradient shape mismatch");
    const int frames = static_cast<int>(input_.rows() / batch_);
    Matrix<T> dx(input_.rows(), channels);
    for (int b = 0; b < batch_; ++b) {
      const auto rows = input_.middleRows(static_cast<Eigen::Index>(b) * frames, frames);
      // d mean / dx = 1/T ; d std / dx = (x - mean) / (T * std)
      const RowVector<T> g_mean = dy.row(b).head(channels) / static_cast<T>(frames);
      const RowVector<T> g_std =
          (dy.row(b).tail(channels).array() / (std_.row(b).array() * static_cast<T>(frames))).matrix();
      auto out = dx.middleRows(static_cast<Eigen::Index>(b) * frames, frames);
      out = ((rows.rowwise() - mean_.row(b)).array().rowwise() * g_std.array()).matrix();
      out.rowwise() += g_mean;
    }
    return dx;
  }

 private:
  static T ordered_sum(std::vector<T>& v) {
    std::sort(v.begin(), v.end());
    T acc = T(0);
    for (T e : v) acc += e;
    return acc;
  }

  static Matrix<T> pool(const Matrix<T>& x, int batch, Matrix<T>& mean, Matrix<T>& sd) {
    if (batch < 1 || x.rows() % batch != 0) throw ShapeError("stats_pool: rows not divisible by batch size");
    const int frames = static_cast<int>(x.rows() / batch);
    if (frames < 2) throw ShapeError("stats_pool: needs at least 2 frames, got " + std::to_string(frames));
    const Eigen::Index channels = x.cols();
    mean.resize(batch, channels);
    sd.resize(batch, channels);
    std::vector<T> scratch(static_cast<std::size_t>(frames));
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index base = static_cast<Eigen::Index>(b) * frames;
      for (Eigen::Index c = 0; c < channels; ++c) {
        for (int t = 0; t < frames; ++t) scratch[t] = x(base + t, c);
        const T mu = ordered_sum(scratch) / static_cast<T>(frames);
        for (int t = 0; t < frames; ++t) {
          const T d = x(base + t, c) - mu;
          scratch[t] = d * d;
        }
        const T var = ordered_sum(scratch) / static_cast<T>(frames);
        mean(b, c) = mu;
        sd(b, c) = std::sqrt(var + static_cast<T>(kVarianceEps));
      }
    }
    Matrix<T> out(batch, 2 * channels);
    out << mean, sd;
    return out;
  }

  Matrix<T> input_;
  Matrix<T> mean_;
  Matrix<T> std_;
  int batch_ = 0;
};

}  // namespace stutternet::nn
