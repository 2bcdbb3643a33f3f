#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "stutternet/error.hpp"
#include "stutternet/features.hpp"
#include "stutternet/json_util.hpp"
#include "stutternet/nn/stutternet.hpp"
#include "stutternet/optim.hpp"

namespace stutternet {

enum class SplitMode {
  random,  // fresh 80/10/10 shuffle per experiment
  kfold,   // one shuffle, disjoint test folds
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  bool operator==(const SplitFractions&) const = default;
};

/// Everything that determines a run. Serialised next to every model and
/// report so results can be reproduced from the file alone.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int n_experiments = 10;
  SplitFractions split;
  SplitMode split_mode = SplitMode::random;
  bool speaker_disjoint = false;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 7;
  bool cmvn = false;
  AmsgradConfig optimizer;
  MfccConfig features;
  nn::ModelConfig model;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    if (n_experiments < 1) throw ConfigError("n_experiments must be >= 1");
    if (split.train <= 0.0 || split.val <= 0.0 || split.test <= 0.0) {
      throw ConfigError("split fractions must all be positive");
    }
    if (std::abs(split.train + split.val + split.test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must sum to 1");
    }
    if (split_mode == SplitMode::kfold && n_experiments < 3) {
      throw ConfigError("kfold split needs n_experiments >= 3 (one fold each for test and validation)");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    optimizer.validate();
    features.validate();
    model.validate();
    if (model.n_classes != kNumClasses) {
      throw ConfigError("model.n_classes must be " + std::to_string(kNumClasses) + " for the label set");
    }
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{
      {"seed", c.seed},
      {"n_experiments", c.n_experiments},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
      {"split_mode", c.split_mode == SplitMode::random ? "random" : "kfold"},
      {"speaker_disjoint", c.speaker_disjoint},
      {"batch_size", c.batch_size},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"cmvn", c.cmvn},
      {"optimizer", c.optimizer},
      {"features", c.features},
      {"model", c.model},
  };
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  constexpr std::string_view where = "config";
  detail::require_known_keys(j,
                             {"seed", "n_experiments", "split", "split_mode", "speaker_disjoint", "batch_size",
                              "max_epochs", "patience", "cmvn", "optimizer", "features", "model"},
                             where);
  detail::read_optional(j, "seed", c.seed, where);
  detail::read_optional(j, "n_experiments", c.n_experiments, where);
  if (auto it = j.find("split"); it != j.end()) {
    detail::require_known_keys(*it, {"train", "val", "test"}, "split");
    detail::read_optional(*it, "train", c.split.train, "split");
    detail::read_optional(*it, "val", c.split.val, "split");
    detail::read_optional(*it, "test", c.split.test, "split");
  }
  std::string mode = c.split_mode == SplitMode::random ? "random" : "kfold";
  detail::read_optional(j, "split_mode", mode, where);
  if (mode == "random") {
    c.split_mode = SplitMode::random;
  } else if (mode == "kfold") {
    c.split_mode = SplitMode::kfold;
  } else {
    throw ConfigError("split_mode must be 'random' or 'kfold'");
  }
  detail::read_optional(j, "speaker_disjoint", c.speaker_disjoint, where);
  detail::read_optional(j, "batch_size", c.batch_size, where);
  detail::read_optional(j, "max_epochs", c.max_epochs, where);
  detail::read_optional(j, "patience", c.patience, where);
  detail::read_optional(j, "cmvn", c.cmvn, where);
  if (auto it = j.find("optimizer"); it != j.end()) from_json(*it, c.optimizer);
  if (auto it = j.find("features"); it != j.end()) from_json(*it, c.features);
  if (auto it = j.find("model"); it != j.end()) nn::from_json(*it, c.model);
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = j.get<ExperimentConfig>();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace stutternet
