#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stutternet/error.hpp"
#include "stutternet/json_util.hpp"
#include "stutternet/nn/parameter.hpp"

namespace stutternet {

struct AmsgradConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AmsgradConfig&) const = default;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
  }
};

inline void to_json(nlohmann::json& j, const AmsgradConfig& c) {
  j = nlohmann::json{{"name", "amsgrad"}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

inline void from_json(const nlohmann::json& j, AmsgradConfig& c) {
  constexpr std::string_view where = "optimizer";
  detail::require_known_keys(j, {"name", "lr", "beta1", "beta2", "eps"}, where);
  std::string name = "amsgrad";
  detail::read_optional(j, "name", name, where);
  if (name != "amsgrad") throw ConfigError("optimizer.name: only 'amsgrad' is supported");
  detail::read_optional(j, "lr", c.lr, where);
  detail::read_optional(j, "beta1", c.beta1, where);
  detail::read_optional(j, "beta2", c.beta2, where);
  detail::read_optional(j, "eps", c.eps, where);
}

/// AMSGrad. Per parameter:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  vmax <- max(vmax, v)
///   theta <- theta - lr * (m / (1 - b1^k)) / (sqrt(vmax) + eps)
/// Only the first moment is bias-corrected.
template <class T>
class Amsgrad {
 public:
  struct Slot {
    Matrix<T> m, v, v_max;
  };

  explicit Amsgrad(AmsgradConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const AmsgradConfig& config() const { return cfg_; }
  long step_count() const { return step_; }
  const std::vector<Slot>& slots() const { return slots_; }

  /// One update of every parameter from its accumulated gradient. The
  /// parameter list must be the same, in the same order, on every call.
  void step(const std::vector<nn::Parameter<T>*>& params) {
    if (slots_.empty()) {
      for (auto* p : params) {
        slots_.push_back({Matrix<T>::Zero(p->value.rows(), p->value.cols()),
                          Matrix<T>::Zero(p->value.rows(), p->value.cols()),
                          Matrix<T>::Zero(p->value.rows(), p->value.cols())});
      }
    }
    if (slots_.size() != params.size()) throw UsageError("amsgrad: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = params[i]->grad;
      if (g.rows() != slots_[i].m.rows() || g.cols() != slots_[i].m.cols()) {
        throw ShapeError("amsgrad: shape of " + params[i]->name + " changed");
      }
      if (!g.allFinite()) throw NumericsError("amsgrad: non-finite gradient in " + params[i]->name);
    }

    ++step_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(cfg_.lr / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_))));
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& s = slots_[i];
      const auto& g = params[i]->grad;
      s.m = b1 * s.m + (T(1) - b1) * g;
      s.v = b2 * s.v + (T(1) - b2) * g.cwiseProduct(g);
      s.v_max = s.v_max.cwiseMax(s.v);
      params[i]->value.array() -= step_size * s.m.array() / (s.v_max.array().sqrt() + eps);
    }
  }

 private:
  AmsgradConfig cfg_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace stutternet
