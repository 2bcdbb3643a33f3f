#pragma once

#include <array>
#include <utility>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stutternet/error.hpp"
#include "stutternet/json_util.hpp"
#include "stutternet/nn/activation.hpp"
#include "stutternet/nn/batch_norm.hpp"
#include "stutternet/nn/dense.hpp"
#include "stutternet/nn/parameter.hpp"
#include "stutternet/nn/stats_pool.hpp"
#include "stutternet/nn/tdnn.hpp"

namespace stutternet::nn {

inline constexpr int kTdnnLayers = 5;

/// Frame offsets of the five TDNN layers for a first-layer context width.
///
/// Width 5 gives {-2..2}, {-2,0,2}, {-3,0,3}, {0}, {0}. Other widths w = 2r+1
/// keep the layer shapes: layer 1 reads -r..r, layer 2 reads {-r,0,r} and
/// layer 3 reads {-q,0,q} with q = round(1.5 r), halves rounded up.
inline std::array<std::vector<int>, kTdnnLayers> tdnn_contexts(int width) {
  if (width < 3 || width % 2 == 0) throw ConfigError("context width must be odd and >= 3, got " + std::to_string(width));
  const int r = (width - 1) / 2;
  const int q = (3 * r + 1) / 2;
  std::vector<int> first;
  for (int k = -r; k <= r; ++k) first.push_back(k);
  return {first, {-r, 0, r}, {-q, 0, q}, {0}, {0}};
}

struct ModelConfig {
  int hidden = 512;
  int context = 5;
  int n_classes = 4;
  double dropout = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (hidden < 1) throw ConfigError("model.hidden must be >= 1");
    tdnn_contexts(context);
    if (n_classes < 2) throw ConfigError("model.n_classes must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("model.bn_momentum must be in (0, 1]");
    if (!(bn_eps > 0.0)) throw ConfigError("model.bn_eps must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = nlohmann::json{{"hidden", m.hidden},   {"context", m.context},         {"n_classes", m.n_classes},
                     {"dropout", m.dropout}, {"bn_momentum", m.bn_momentum}, {"bn_eps", m.bn_eps},
                     {"init", "glorot_uniform"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  constexpr std::string_view where = "model";
  detail::require_known_keys(j, {"hidden", "context", "n_classes", "dropout", "bn_momentum", "bn_eps", "init"}, where);
  detail::read_optional(j, "hidden", m.hidden, where);
  detail::read_optional(j, "context", m.context, where);
  detail::read_optional(j, "n_classes", m.n_classes, where);
  detail::read_optional(j, "dropout", m.dropout, where);
  detail::read_optional(j, "bn_momentum", m.bn_momentum, where);
  detail::read_optional(j, "bn_eps", m.bn_eps, where);
  std::string init = "glorot_uniform";
  detail::read_optional(j, "init", init, where);
  if (init != "glorot_uniform") throw ConfigError("model.init: only 'glorot_uniform' is supported");
}

/// StutterNet: five TDNN layers (each ReLU + batch norm), statistics pooling,
/// FC1/FC2 (ReLU + batch norm + dropout) and the FC3 classifier.
///
/// Inputs are (batch * frames) x input_dim row blocks. `infer`/`embed` are
/// const eval-mode paths; `forward_train` caches activations for `backward`.
template <class T>
class StutterNet {
 public:
  StutterNet(int input_dim, const ModelConfig& cfg)
      : config_(validated(cfg)),
        input_dim_(input_dim),
        fc1_("fc1", 2 * cfg.hidden, cfg.hidden),
        fc2_("fc2", cfg.hidden, cfg.hidden),
        fc3_("fc3", cfg.hidden, cfg.n_classes),
        fc1_bn_("fc1.bn", cfg.hidden, cfg.bn_momentum, cfg.bn_eps),
        fc2_bn_("fc2.bn", cfg.hidden, cfg.bn_momentum, cfg.bn_eps),
        drop1_(cfg.dropout),
        drop2_(cfg.dropout) {
    if (input_dim < 1) throw ConfigError("model input_dim must be >= 1");
    const auto contexts = tdnn_contexts(cfg.context);
    const int h = cfg.hidden;
    for (int l = 0; l < kTdnnLayers; ++l) {
      const std::string name = "tdnn" + std::to_string(l + 1);
      tdnn_.emplace_back(name, l == 0 ? input_dim : h, h, contexts[l]);
      tdnn_bn_.emplace_back(name + ".bn", h, cfg.bn_momentum, cfg.bn_eps);
    }
    tdnn_relu_.resize(kTdnnLayers);
  }

  const ModelConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }
  int hidden() const { return config_.hidden; }
  int n_classes() const { return config_.n_classes; }
  const std::vector<TdnnLayer<T>>& tdnn_layers() const { return tdnn_; }

  /// Frames left after the TDNN stack; throws ShapeError if too short.
  int output_frames(int frames) const {
    for (const auto& layer : tdnn_) frames = layer.output_frames(frames);
    if (frames < 2) throw ShapeError("stats_pool: needs at least 2 frames after the TDNN stack, got " + std::to_string(frames));
    return frames;
  }

  void initialize(Rng& rng) {
    for (auto& l : tdnn_) l.initialize(rng);
    fc1_.initialize(rng);
    fc2_.initialize(rng);
    fc3_.initialize(rng);
  }

  /// Eval-mode logits, batch x n_classes.
  Matrix<T> infer(const Matrix<T>& x, int batch) const {
    return fc3_.infer(embed(x, batch));
  }

  /// Post-batch-norm FC2 activations (eval mode), batch x hidden.
  Matrix<T> embed(const Matrix<T>& x, int batch) const {
    check_input(x, batch);
    Matrix<T> h = x;
    for (int l = 0; l < kTdnnLayers; ++l) h = tdnn_bn_[l].infer(Relu<T>::infer(tdnn_[l].infer(h, batch)));
    h = pool_.infer(h, batch);
    h = fc1_bn_.infer(Relu<T>::infer(fc1_.infer(h)));
    return fc2_bn_.infer(Relu<T>::infer(fc2_.infer(h)));
  }

  /// Train-mode logits; batch statistics, running-stat updates, dropout masks
  /// drawn from `rng`.
  Matrix<T> forward_train(const Matrix<T>& x, int batch, Rng& rng) {
    check_input(x, batch);
    Matrix<T> h = x;
    for (int l = 0; l < kTdnnLayers; ++l) {
      h = tdnn_bn_[l].forward(tdnn_relu_[l].forward(tdnn_[l].forward(h, batch)));
    }
    h = pool_.forward(h, batch);
    h = drop1_.forward(fc1_bn_.forward(fc1_relu_.forward(fc1_.forward(h))), rng);
    h = drop2_.forward(fc2_bn_.forward(fc2_relu_.forward(fc2_.forward(h))), rng);
    return fc3_.forward(h);
  }

  Matrix<T> forward(const Matrix<T>& x, int batch, Mode mode, Rng* rng = nullptr) {
    if (mode == Mode::eval) return infer(x, batch);
    if (rng == nullptr) throw UsageError("train-mode forward needs an Rng for dropout");
    return forward_train(x, batch, *rng);
  }

  /// Accumulates gradients of every parameter from dL/dlogits of the last
  /// forward_train call.
  void backward(const Matrix<T>& d_logits) {
    Matrix<T> g = fc3_.backward(d_logits);
    g = fc2_.backward(fc2_relu_.backward(fc2_bn_.backward(drop2_.backward(g))));
    g = fc1_.backward(fc1_relu_.backward(fc1_bn_.backward(drop1_.backward(g))));
    g = pool_.backward(g);
    for (int l = kTdnnLayers - 1; l >= 0; --l) {
      g = tdnn_relu_[l].backward(tdnn_bn_[l].backward(g));
      g = tdnn_[l].backward(g, l > 0);
    }
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Every trainable tensor in a fixed order.
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (int l = 0; l < kTdnnLayers; ++l) {
      out.push_back(&tdnn_[l].weight);
      out.push_back(&tdnn_[l].bias);
      out.push_back(&tdnn_bn_[l].gamma);
      out.push_back(&tdnn_bn_[l].beta);
    }
    for (auto [fc, bn] : {std::pair{&fc1_, &fc1_bn_}, std::pair{&fc2_, &fc2_bn_}}) {
      out.push_back(&fc->weight);
      out.push_back(&fc->bias);
      out.push_back(&bn->gamma);
      out.push_back(&bn->beta);
    }
    out.push_back(&fc3_.weight);
    out.push_back(&fc3_.bias);
    return out;
  }

  std::vector<const Parameter<T>*> parameters() const {
    auto mut = const_cast<StutterNet*>(this)->parameters();
    return {mut.begin(), mut.end()};
  }

  /// Batch-norm running statistics in a fixed order.
  std::vector<Buffer<T>*> buffers() {
    std::vector<Buffer<T>*> out;
    auto add = [&](BatchNorm<T>& bn) {
      out.push_back(&bn.running_mean);
      out.push_back(&bn.running_var);
    };
    for (auto& bn : tdnn_bn_) add(bn);
    add(fc1_bn_);
    add(fc2_bn_);
    return out;
  }

  std::vector<const Buffer<T>*> buffers() const {
    auto mut = const_cast<StutterNet*>(this)->buffers();
    return {mut.begin(), mut.end()};
  }

  /// Weights, biases, gamma and beta (running statistics excluded).
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }

 private:
  static const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
  }

  void check_input(const Matrix<T>& x, int batch) const {
    if (x.cols() != input_dim_) {
      throw ShapeError("tdnn1: expected " + std::to_string(input_dim_) + " feature coefficients, got " +
                       std::to_string(x.cols()));
    }
    if (batch < 1 || x.rows() % batch != 0) throw ShapeError("tdnn1: rows not divisible by batch size");
    output_frames(static_cast<int>(x.rows() / batch));
  }

  ModelConfig config_;
  int input_dim_;

  std::vector<TdnnLayer<T>> tdnn_;
  std::vector<BatchNorm<T>> tdnn_bn_;
  std::vector<Relu<T>> tdnn_relu_;
  StatsPool<T> pool_;
  Dense<T> fc1_, fc2_, fc3_;
  BatchNorm<T> fc1_bn_, fc2_bn_;
  Dropout<T> drop1_, drop2_;
  Relu<T> fc1_relu_, fc2_relu_;
};

}  // namespace stutternet::nn
