#pragma once

// Experiment protocol: repeated random 80/10/10 splits (or strict k-fold),
// AMSGrad training with early stopping on validation loss, evaluation on the
// held-out split, and one-axis hyperparameter sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stutternet/config.hpp"
#include "stutternet/dataset.hpp"
#include "stutternet/error.hpp"
#include "stutternet/metrics.hpp"
#include "stutternet/nn/stutternet.hpp"
#include "stutternet/optim.hpp"
#include "stutternet/rng.hpp"

namespace stutternet {

using Model = nn::StutterNet<float>;

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

namespace detail {

/// floor(f * n), robust to f * n landing a hair below an integer.
inline std::size_t fraction_of(double f, std::size_t n) {
  return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
}

inline void require_nonempty(const SplitIndices& s, std::size_t n) {
  if (s.train.empty() || s.val.empty() || s.test.empty()) {
    throw ConfigError("split of " + std::to_string(n) + " items leaves an empty partition (train " +
                      std::to_string(s.train.size()) + ", val " + std::to_string(s.val.size()) + ", test " +
                      std::to_string(s.test.size()) + ")");
  }
}

}  // namespace detail

/// Uniform shuffle, then floor(train*n) / floor(val*n) / remainder.
inline SplitIndices random_split(std::size_t n, const SplitFractions& fractions, Rng& rng) {
  if (n == 0) throw ConfigError("cannot split an empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const std::size_t n_train = detail::fraction_of(fractions.train, n);
  const std::size_t n_val = std::min(n - n_train, detail::fraction_of(fractions.val, n));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  detail::require_nonempty(s, n);
  return s;
}

/// Strict partition: one shuffle from `seed` into `folds` near-equal folds;
/// experiment `fold` tests on that fold and validates on the next one.
inline SplitIndices kfold_split(std::size_t n, int folds, int fold, std::uint64_t seed) {
  if (n == 0) throw ConfigError("cannot split an empty dataset");
  if (folds < 3) throw ConfigError("kfold split needs at least 3 folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const int test_fold = fold % folds;
  const int val_fold = (fold + 1) % folds;
  SplitIndices s;
  for (std::size_t i = 0; i < n; ++i) {
    const int f = static_cast<int>(i * static_cast<std::size_t>(folds) / n);
    auto& dst = f == test_fold ? s.test : f == val_fold ? s.val : s.train;
    dst.push_back(order[i]);
  }
  detail::require_nonempty(s, n);
  return s;
}

/// Random split over speakers instead of segments; every segment of a speaker
/// lands in the same partition.
inline SplitIndices speaker_split(const Dataset& data, const SplitFractions& fractions, Rng& rng) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < data.size(); ++i) by_speaker[data[i].speaker].push_back(i);
  if (by_speaker.count("") != 0) throw ConfigError("speaker-disjoint split needs a speaker for every manifest row");
  std::vector<std::string> speakers;
  for (const auto& kv : by_speaker) speakers.push_back(kv.first);
  const auto groups = random_split(speakers.size(), fractions, rng);
  SplitIndices s;
  auto gather = [&](const std::vector<std::size_t>& which, std::vector<std::size_t>& dst) {
    for (auto g : which) {
      const auto& idx = by_speaker[speakers[g]];
      dst.insert(dst.end(), idx.begin(), idx.end());
    }
  };
  gather(groups.train, s.train);
  gather(groups.val, s.val);
  gather(groups.test, s.test);
  return s;
}

/// The split used by experiment `index` of a cross-validation run.
inline SplitIndices split_for_experiment(const ExperimentConfig& cfg, const Dataset& data, int index) {
  if (cfg.split_mode == SplitMode::kfold) {
    return kfold_split(data.size(), cfg.n_experiments, index, derive_seed(cfg.seed, 0xF01D));
  }
  Rng rng(derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)), 0x5B117));
  return cfg.speaker_disjoint ? speaker_split(data, cfg.split, rng) : random_split(data.size(), cfg.split, rng);
}

/// A batch in model layout: (batch * frames) x coefficients.
struct Batch {
  Matrix<float> features;
  std::vector<int> labels;
  int size = 0;
  int frames = 0;
};

inline Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch: empty batch");
  const auto& first = data.at(indices.front()).features;
  Batch b;
  b.size = static_cast<int>(indices.size());
  b.frames = first.frames();
  b.features.resize(static_cast<Eigen::Index>(b.size) * b.frames, first.coeffs());
  for (int i = 0; i < b.size; ++i) {
    const auto& ex = data.at(indices[static_cast<std::size_t>(i)]);
    if (ex.features.frames() != b.frames || ex.features.coeffs() != first.coeffs()) {
      throw ShapeError("make_batch: all feature matrices in a batch must share T and C");
    }
    b.features.middleRows(static_cast<Eigen::Index>(i) * b.frames, b.frames) = ex.features.data.cast<float>();
    b.labels.push_back(ex.label);
  }
  return b;
}

/// Row-wise argmax; ties go to the lowest class index.
template <class T>
std::vector<int> argmax_rows(const Matrix<T>& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    int best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

struct EvalOutput {
  double loss = 0.0;  // mean cross-entropy over samples
  std::vector<int> labels;
  std::vector<int> predictions;
};

/// Eval-mode loss and predictions over `indices`, in order.
inline EvalOutput evaluate(const Model& model, const Dataset& data, std::span<const std::size_t> indices,
                           int batch_size) {
  EvalOutput out;
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(batch_size, indices.size() - start));
    const Batch b = make_batch(data, chunk);
    const Matrix<float> logits = model.infer(b.features, b.size);
    const auto loss = nn::softmax_cross_entropy(logits, b.labels);
    if (!std::isfinite(loss.loss)) throw NumericsError("evaluation loss is not finite");
    total += loss.loss * b.size;
    const auto pred = argmax_rows(logits);
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.predictions.insert(out.predictions.end(), pred.begin(), pred.end());
  }
  out.loss = indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
  return out;
}

/// Patience counter on a monitored loss. An epoch counts as an improvement
/// only if its loss is strictly below the best so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }

  /// Records the next epoch's loss; returns true if it is the new best.
  bool update(double loss) {
    if (std::isnan(loss)) throw NumericsError("validation loss is NaN");
    ++epochs_;
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epochs_;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_loss() const { return best_loss_; }
  int epochs_seen() const { return epochs_; }

 private:
  int patience_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

/// Parameters and running statistics of a model, detached from its caches.
struct ModelState {
  std::vector<Matrix<float>> params;
  std::vector<Matrix<float>> buffers;
};

inline ModelState capture_state(const Model& m) {
  ModelState s;
  for (const auto* p : m.parameters()) s.params.push_back(p->value);
  for (const auto* b : m.buffers()) s.buffers.push_back(b->value);
  return s;
}

inline void restore_state(Model& m, const ModelState& s) {
  auto params = m.parameters();
  auto buffers = m.buffers();
  if (params.size() != s.params.size() || buffers.size() != s.buffers.size()) {
    throw ShapeError("restore_state: model layout differs from snapshot");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s.params[i];
  for (std::size_t i = 0; i < buffers.size(); ++i) buffers[i]->value = s.buffers[i];
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

/// Called after every epoch with the live model; return false to stop.
using EpochCallback = std::function<bool(const EpochRecord&, const Model&)>;

struct TrainOutput {
  Model model;  // best-validation snapshot
  TrainingHistory history;
};

inline Model make_model(const ExperimentConfig& cfg) { return Model(cfg.features.n_mfcc, cfg.model); }

/// Trains one model on `train`, monitoring mean validation loss after every
/// epoch and returning the parameters of the best epoch.
inline TrainOutput train_one(const ExperimentConfig& cfg, const Dataset& data, std::span<const std::size_t> train,
                             std::span<const std::size_t> val, Rng& rng, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.size() < 2 || val.empty()) {
    throw ConfigError("train_one needs at least 2 training items and a non-empty validation set");
  }

  Model model = make_model(cfg);
  model.initialize(rng);
  Amsgrad<float> opt(cfg.optimizer);
  const auto params = model.parameters();

  EarlyStopping stopper(cfg.patience);
  ModelState best = capture_state(model);
  TrainingHistory history;
  std::vector<std::size_t> order(train.begin(), train.end());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::span<const std::size_t> chunk(order.data() + start,
                                               std::min<std::size_t>(cfg.batch_size, order.size() - start));
      // Batch norm over FC activations needs two rows; a lone leftover item is skipped.
      if (chunk.size() < 2) continue;
      const Batch b = make_batch(data, chunk);
      try {
        model.zero_grad();
        const Matrix<float> logits = model.forward_train(b.features, b.size, rng);
        const auto loss = nn::softmax_cross_entropy(logits, b.labels);
        if (!std::isfinite(loss.loss)) throw NumericsError("training loss is not finite");
        model.backward(loss.d_logits);
        opt.step(params);
        total += loss.loss * b.size;
        seen += chunk.size();
      } catch (const NumericsError& e) {
        throw NumericsError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no) + ": " +
                            e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(seen);
    rec.val_loss = evaluate(model, data, val, cfg.batch_size).loss;
    history.epochs.push_back(rec);
    if (stopper.update(rec.val_loss)) best = capture_state(model);

    const bool keep_going = !on_epoch || on_epoch(rec, model);
    if (stopper.should_stop()) {
      history.early_stopped = true;
      break;
    }
    if (!keep_going) break;
  }

  history.best_epoch = stopper.best_epoch();
  history.best_val_loss = stopper.best_loss();
  Model out = make_model(cfg);
  restore_state(out, best);
  return {std::move(out), std::move(history)};
}

struct ExperimentOutcome {
  int index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  TrainingHistory history;
  ConfusionMatrix confusion;
  MetricsSummary metrics;
};

struct ExperimentResult {
  std::vector<ExperimentOutcome> experiments;
  MetricsSummary mean;    // mean of per-experiment metrics
  MetricsSummary pooled;  // metrics of the summed confusion matrix
  ConfusionMatrix pooled_confusion;
  std::vector<std::string> warnings;

  int failed() const {
    int n = 0;
    for (const auto& e : experiments) n += e.ok ? 0 : 1;
    return n;
  }
};

/// Runs `n_experiments` independent split/train/test cycles with seeds
/// derived from the config seed. Experiments may run on `jobs` threads;
/// results are identical for any `jobs`. An experiment that fails
/// numerically is kept with ok = false and excluded from the aggregates.
inline ExperimentResult cross_validate(const ExperimentConfig& cfg, const Dataset& data, int jobs = 1) {
  cfg.validate();
  if (data.empty()) throw ConfigError("cross_validate: empty dataset");

  ExperimentResult result;
  std::vector<int> per_class(kNumClasses, 0);
  for (const auto& ex : data) {
    if (ex.label < 0 || ex.label >= kNumClasses) throw UsageError("dataset label out of range");
    ++per_class[static_cast<std::size_t>(ex.label)];
  }
  for (int k = 0; k < kNumClasses; ++k) {
    if (per_class[k] == 0) result.warnings.push_back("no samples of class " + std::string(kLabelNames[k]));
  }

  result.experiments.resize(static_cast<std::size_t>(cfg.n_experiments));
  parallel_for(result.experiments.size(), jobs, [&](std::size_t i) {
    auto& out = result.experiments[i];
    out.index = static_cast<int>(i);
    out.seed = derive_seed(cfg.seed, i);
    const SplitIndices split = split_for_experiment(cfg, data, static_cast<int>(i));
    out.n_train = split.train.size();
    out.n_val = split.val.size();
    out.n_test = split.test.size();
    try {
      Rng rng(out.seed);
      auto trained = train_one(cfg, data, split.train, split.val, rng);
      const auto eval = evaluate(trained.model, data, split.test, cfg.batch_size);
      out.history = std::move(trained.history);
      out.confusion = confusion(eval.labels, eval.predictions);
      out.metrics = summarize(out.confusion);
      out.ok = true;
    } catch (const NumericsError& e) {
      out.error = e.what();
    }
  });

  std::vector<MetricsSummary> ok_runs;
  for (const auto& e : result.experiments) {
    if (!e.ok) continue;
    ok_runs.push_back(e.metrics);
    result.pooled_confusion += e.confusion;
  }
  result.mean = mean_summary(ok_runs);
  result.pooled = summarize(result.pooled_confusion);
  return result;
}

inline constexpr std::string_view kReportSchema = "stutternet.report/1";

inline nlohmann::json confusion_to_json(const ConfusionMatrix& cm) { return cm.rows(); }

inline nlohmann::json history_to_json(const TrainingHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  return {{"best_epoch", h.best_epoch}, {"early_stopped", h.early_stopped}, {"epochs", epochs}};
}

/// The versioned evaluation report.
inline nlohmann::json report_json(const ExperimentConfig& cfg, const ExperimentResult& r) {
  nlohmann::json experiments = nlohmann::json::array();
  for (const auto& e : r.experiments) {
    nlohmann::json j{{"index", e.index},     {"seed", e.seed},       {"status", e.ok ? "ok" : "failed"},
                     {"n_train", e.n_train}, {"n_val", e.n_val},     {"n_test", e.n_test}};
    if (e.ok) {
      j["confusion"] = confusion_to_json(e.confusion);
      j["metrics"] = summary_to_json(e.metrics);
      j["history"] = history_to_json(e.history);
    } else {
      j["error"] = e.error;
    }
    experiments.push_back(std::move(j));
  }
  nlohmann::json classes = nlohmann::json::array();
  for (auto n : kLabelNames) classes.push_back(std::string(n));
  return {{"schema", kReportSchema},
          {"classes", classes},
          {"config", cfg},
          {"n_experiments", cfg.n_experiments},
          {"failed_experiments", r.failed()},
          {"warnings", r.warnings},
          {"mean", summary_to_json(r.mean)},
          {"pooled", summary_to_json(r.pooled)},
          {"pooled_confusion", confusion_to_json(r.pooled_confusion)},
          {"experiments", experiments}};
}

/// Epoch table as CSV with header `epoch,train_loss,val_loss`.
inline std::string history_csv(const TrainingHistory& h) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss\n";
  for (const auto& e : h.epochs) os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  return os.str();
}

enum class SweepAxis { mels, context, layer };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "mels") return SweepAxis::mels;
  if (s == "context") return SweepAxis::context;
  if (s == "layer") return SweepAxis::layer;
  throw UsageError("sweep axis must be mels, context or layer");
}

inline std::string_view axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::mels: return "mels";
    case SweepAxis::context: return "context";
    case SweepAxis::layer: return "layer";
  }
  return "?";
}

/// The standard grid for each axis (baseline not included).
inline std::vector<int> default_sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::mels: return {10, 30, 40, 50};
    case SweepAxis::context: return {3, 7, 9, 11};
    case SweepAxis::layer: return {64, 128, 256, 1024};
  }
  return {};
}

inline int axis_value(const ExperimentConfig& cfg, SweepAxis a) {
  switch (a) {
    case SweepAxis::mels: return cfg.features.n_mels;
    case SweepAxis::context: return cfg.model.context;
    case SweepAxis::layer: return cfg.model.hidden;
  }
  return 0;
}

/// `base` with one axis replaced. With fewer mel bands than cepstral
/// coefficients, n_mfcc drops to n_mels.
inline ExperimentConfig with_axis(ExperimentConfig base, SweepAxis a, int value) {
  switch (a) {
    case SweepAxis::mels:
      base.features.n_mels = value;
      base.features.n_mfcc = std::min(base.features.n_mfcc, value);
      break;
    case SweepAxis::context: base.model.context = value; break;
    case SweepAxis::layer: base.model.hidden = value; break;
  }
  base.validate();
  return base;
}

struct SweepRow {
  SweepAxis axis;
  int value = 0;
  bool baseline = false;
  ExperimentConfig config;
  ExperimentResult result;
};

/// Supplies the dataset for a feature configuration (re-extracting when the
/// mel axis is swept).
using DatasetProvider = std::function<Dataset(const MfccConfig&)>;

/// Cross-validates the baseline and each value of one axis, every other
/// setting held at the baseline. Rows come back sorted by value.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis, std::vector<int> values,
                                   const DatasetProvider& provider, int jobs = 1) {
  base.validate();
  const int baseline = axis_value(base, axis);
  values.push_back(baseline);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  std::vector<SweepRow> rows;
  std::optional<std::pair<MfccConfig, Dataset>> cached;
  for (int v : values) {
    SweepRow row{axis, v, v == baseline, with_axis(base, axis, v), {}};
    if (!cached || !(cached->first == row.config.features)) {
      cached.emplace(row.config.features, provider(row.config.features));
    }
    row.result = cross_validate(row.config, cached->second, jobs);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "axis,value,baseline,mean_total_accuracy,mean_mcc,pooled_total_accuracy,pooled_mcc";
  for (auto n : kLabelNames) os << ",mean_accuracy_" << n;
  os << ",failed_experiments\n";
  for (const auto& r : rows) {
    os << axis_name(r.axis) << ',' << r.value << ',' << (r.baseline ? 1 : 0) << ',' << r.result.mean.total_accuracy
       << ',' << r.result.mean.mcc << ',' << r.result.pooled.total_accuracy << ',' << r.result.pooled.mcc;
    for (int k = 0; k < kNumClasses; ++k) {
      os << ',' << (r.result.mean.per_class.empty() ? 0.0 : r.result.mean.per_class[k].accuracy);
    }
    os << ',' << r.result.failed() << '\n';
  }
  return os.str();
}

inline nlohmann::json sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"axis", axis_name(r.axis)},
                   {"value", r.value},
                   {"baseline", r.baseline},
                   {"report", report_json(r.config, r.result)}});
  }
  return {{"schema", "stutternet.sweep/1"}, {"rows", out}};
}

}  // namespace stutternet
