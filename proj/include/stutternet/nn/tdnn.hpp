#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "stutternet/error.hpp"
#include "stutternet/nn/parameter.hpp"

namespace stutternet::nn {

/// Time-delay layer: a valid (unpadded) temporal convolution that reads the
/// frames at the given offsets around t. Offsets {-2,0,2} are a kernel of
/// three taps with dilation 2.
///
/// Activations are (batch * frames) x channels, one block of rows per item.
/// The weight is stored as (|context| * in_dim) x out_dim; row block k holds
/// the taps applied to offset context[k].
template <class T>
class TdnnLayer {
 public:
  TdnnLayer(std::string name, int in_dim, int out_dim, std::vector<int> context)
      : weight(name + ".weight", static_cast<Eigen::Index>(context.size()) * in_dim, out_dim),
        bias(name + ".bias", 1, out_dim),
        name_(std::move(name)),
        in_dim_(in_dim),
        out_dim_(out_dim),
        context_(std::move(context)) {
    if (context_.empty()) throw ConfigError(name_ + ": empty context");
    if (!std::is_sorted(context_.begin(), context_.end()) ||
        std::adjacent_find(context_.begin(), context_.end()) != context_.end()) {
      throw ConfigError(name_ + ": context offsets must be strictly increasing");
    }
    if (in_dim < 1 || out_dim < 1) throw ConfigError(name_ + ": channel counts must be positive");
  }

  const std::string& name() const { return name_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  const std::vector<int>& context() const { return context_; }
  int span() const { return context_.back() - context_.front(); }

  int output_frames(int frames) const {
    if (frames < span() + 1) {
      throw ShapeError(name_ + ": " + std::to_string(frames) + " frames, context span " +
                       std::to_string(span()) + " needs at least " + std::to_string(span() + 1));
    }
    return frames - span();
  }

  void initialize(Rng& rng) {
    const double taps = static_cast<double>(context_.size());
    glorot_uniform(weight.value, taps * in_dim_, taps * out_dim_, rng);
    bias.value.setZero();
  }

  Matrix<T> infer(const Matrix<T>& x, int batch) const {
    const int frames = check_input(x, batch);
    return (unfold(x, batch, frames) * weight.value).rowwise() + bias.value.row(0);
  }

  Matrix<T> forward(const Matrix<T>& x, int batch) {
    frames_in_ = check_input(x, batch);
    batch_ = batch;
    unfolded_ = unfold(x, batch, frames_in_);
    return (unfolded_ * weight.value).rowwise() + bias.value.row(0);
  }

  /// Accumulates weight/bias gradients; returns dL/dx unless `input_grad` is false.
  Matrix<T> backward(const Matrix<T>& dy, bool input_grad = true) {
    const int out_frames = frames_in_ - span();
    if (dy.rows() != static_cast<Eigen::Index>(batch_) * out_frames || dy.cols() != out_dim_) {
      throw ShapeError(name_ + ": gradient shape mismatch");
    }
    weight.grad.noalias() += unfolded_.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    if (!input_grad) return {};

    const Matrix<T> du = dy * weight.value.transpose();
    Matrix<T> dx = Matrix<T>::Zero(static_cast<Eigen::Index>(batch_) * frames_in_, in_dim_);
    for (int b = 0; b < batch_; ++b) {
      for (std::size_t k = 0; k < context_.size(); ++k) {
        dx.block(static_cast<Eigen::Index>(b) * frames_in_ + context_[k] - context_.front(), 0, out_frames, in_dim_) +=
            du.block(static_cast<Eigen::Index>(b) * out_frames, static_cast<Eigen::Index>(k) * in_dim_, out_frames, in_dim_);
      }
    }
    return dx;
  }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  int check_input(const Matrix<T>& x, int batch) const {
    if (x.cols() != in_dim_) {
      throw ShapeError(name_ + ": expected " + std::to_string(in_dim_) + " input channels, got " +
                       std::to_string(x.cols()));
    }
    if (batch < 1 || x.rows() % batch != 0) throw ShapeError(name_ + ": rows not divisible by batch size");
    const int frames = static_cast<int>(x.rows() / batch);
    output_frames(frames);
    return frames;
  }

  Matrix<T> unfold(const Matrix<T>& x, int batch, int frames) const {
    const int out_frames = frames - span();
    Matrix<T> u(static_cast<Eigen::Index>(batch) * out_frames, static_cast<Eigen::Index>(context_.size()) * in_dim_);
    for (int b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < context_.size(); ++k) {
        u.block(static_cast<Eigen::Index>(b) * out_frames, static_cast<Eigen::Index>(k) * in_dim_, out_frames, in_dim_) =
            x.block(static_cast<Eigen::Index>(b) * frames + context_[k] - context_.front(), 0, out_frames, in_dim_);
      }
    }
    return u;
  }

  std::string name_;
  int in_dim_;
  int out_dim_;
  std::vector<int> context_;

  Matrix<T> unfolded_;
  int batch_ = 0;
  int frames_in_ = 0;
};

}  // namespace stutternet::nn
