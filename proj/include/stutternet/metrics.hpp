#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stutternet/audio_io.hpp"
#include "stutternet/error.hpp"

namespace stutternet {

/// K x K counts; at(i, j) is the number of samples of true class i that were
/// predicted as class j.
class ConfusionMatrix {
 public:
  ConfusionMatrix() : ConfusionMatrix(kNumClasses) {}
  explicit ConfusionMatrix(int classes)
      : k_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
    if (classes < 1) throw UsageError("confusion matrix needs at least one class");
  }

  int classes() const { return k_; }

  std::int64_t at(int truth, int predicted) const { return counts_[index(truth, predicted)]; }

  void add(int truth, int predicted, std::int64_t count = 1) {
    if (count < 0) throw UsageError("confusion matrix counts must be non-negative");
    counts_[index(truth, predicted)] += count;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw UsageError("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

  /// s: every sample.
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts_) s += v;
    return s;
  }

  /// c: samples on the diagonal.
  std::int64_t correct() const {
    std::int64_t c = 0;
    for (int k = 0; k < k_; ++k) c += at(k, k);
    return c;
  }

  /// p_k: times class k was predicted (column sum).
  std::int64_t predicted(int k) const {
    std::int64_t p = 0;
    for (int i = 0; i < k_; ++i) p += at(i, k);
    return p;
  }

  /// t_k: times class k truly occurred (row sum).
  std::int64_t occurred(int k) const {
    std::int64_t t = 0;
    for (int j = 0; j < k_; ++j) t += at(k, j);
    return t;
  }

  std::vector<std::vector<std::int64_t>> rows() const {
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(k_));
    for (int i = 0; i < k_; ++i) {
      for (int j = 0; j < k_; ++j) out[i].push_back(at(i, j));
    }
    return out;
  }

 private:
  std::size_t index(int i, int j) const {
    if (i < 0 || i >= k_ || j < 0 || j >= k_) {
      throw UsageError("class index (" + std::to_string(i) + ", " + std::to_string(j) + ") outside 0.." +
                       std::to_string(k_ - 1));
    }
    return static_cast<std::size_t>(i) * k_ + j;
  }

  int k_;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions,
                                 int classes = kNumClasses) {
  if (labels.size() != predictions.size()) {
    throw UsageError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                     std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
  return cm;
}

/// Multiclass MCC: (c s - t.p) / (sqrt(s^2 - p.p) sqrt(s^2 - t.t)).
/// Returns 0 when either root vanishes (e.g. one class predicted for all).
inline double mcc(const ConfusionMatrix& cm) {
  const double s = static_cast<double>(cm.total());
  const double c = static_cast<double>(cm.correct());
  double tp = 0.0, pp = 0.0, tt = 0.0;
  for (int k = 0; k < cm.classes(); ++k) {
    const double p = static_cast<double>(cm.predicted(k));
    const double t = static_cast<double>(cm.occurred(k));
    tp += t * p;
    pp += p * p;
    tt += t * t;
  }
  const double a = s * s - pp;
  const double b = s * s - tt;
  if (a <= 0.0 || b <= 0.0) return 0.0;
  // sqrt(a * b) rather than sqrt(a) * sqrt(b): a perfect predictor has
  // a == b and then the ratio is exactly 1.
  const double r = (c * s - tp) / std::sqrt(a * b);
  return std::clamp(r, -1.0, 1.0);
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;    // recall in percent
  bool degenerate = false;  // a 0/0 was replaced by 0
};

inline std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out(static_cast<std::size_t>(cm.classes()));
  for (int k = 0; k < cm.classes(); ++k) {
    const double hit = static_cast<double>(cm.at(k, k));
    const auto p = cm.predicted(k);
    const auto t = cm.occurred(k);
    auto& m = out[k];
    m.precision = p > 0 ? hit / static_cast<double>(p) : 0.0;
    m.recall = t > 0 ? hit / static_cast<double>(t) : 0.0;
    // 2PR/(P+R) written as 2 C_kk / (p_k + t_k) has no 0/0 unless both are 0.
    m.f1 = p + t > 0 ? 2.0 * hit / static_cast<double>(p + t) : 0.0;
    m.accuracy = 100.0 * m.recall;
    m.degenerate = p == 0 || t == 0;
  }
  return out;
}

struct Accuracies {
  std::vector<double> per_class;  // percent
  double total = 0.0;             // percent
};

inline Accuracies accuracies(const ConfusionMatrix& cm) {
  Accuracies a;
  for (const auto& m : precision_recall_f1(cm)) a.per_class.push_back(m.accuracy);
  const auto s = cm.total();
  a.total = s > 0 ? 100.0 * static_cast<double>(cm.correct()) / static_cast<double>(s) : 0.0;
  return a;
}

/// Per-class rows plus the footer numbers of a results table.
struct MetricsSummary {
  std::vector<ClassMetrics> per_class;
  double total_accuracy = 0.0;
  double mcc = 0.0;
};

inline MetricsSummary summarize(const ConfusionMatrix& cm) {
  return {precision_recall_f1(cm), accuracies(cm).total, mcc(cm)};
}

/// Arithmetic mean of every field; a class is flagged degenerate in the mean
/// if it was degenerate in any input.
inline MetricsSummary mean_summary(std::span<const MetricsSummary> runs) {
  MetricsSummary out;
  if (runs.empty()) return out;
  const std::size_t k = runs.front().per_class.size();
  out.per_class.assign(k, {});
  for (const auto& r : runs) {
    if (r.per_class.size() != k) throw UsageError("mean_summary: class count differs between runs");
    for (std::size_t c = 0; c < k; ++c) {
      out.per_class[c].precision += r.per_class[c].precision;
      out.per_class[c].recall += r.per_class[c].recall;
      out.per_class[c].f1 += r.per_class[c].f1;
      out.per_class[c].accuracy += r.per_class[c].accuracy;
      out.per_class[c].degenerate = out.per_class[c].degenerate || r.per_class[c].degenerate;
    }
    out.total_accuracy += r.total_accuracy;
    out.mcc += r.mcc;
  }
  const double n = static_cast<double>(runs.size());
  for (auto& m : out.per_class) {
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.accuracy /= n;
  }
  out.total_accuracy /= n;
  out.mcc /= n;
  return out;
}

inline nlohmann::json summary_to_json(const MetricsSummary& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    const auto& c = m.per_class[k];
    rows.push_back({{"class", k < kLabelNames.size() ? std::string(kLabelNames[k]) : std::to_string(k)},
                    {"precision", c.precision},
                    {"recall", c.recall},
                    {"f1", c.f1},
                    {"accuracy", c.accuracy},
                    {"degenerate", c.degenerate}});
  }
  return {{"per_class", rows}, {"total_accuracy", m.total_accuracy}, {"mcc", m.mcc}};
}

inline MetricsSummary summary_from_json(const nlohmann::json& j) {
  MetricsSummary m;
  for (const auto& row : j.at("per_class")) {
    m.per_class.push_back({row.at("precision").get<double>(), row.at("recall").get<double>(),
                           row.at("f1").get<double>(), row.at("accuracy").get<double>(),
                           row.value("degenerate", false)});
  }
  m.total_accuracy = j.at("total_accuracy").get<double>();
  m.mcc = j.at("mcc").get<double>();
  return m;
}

/// Human-readable table: one row per class (precision, recall, F1 as
/// fractions, accuracy in percent) and a footer with total accuracy and MCC.
inline std::string format_table(const MetricsSummary& m, const std::string& title = {}) {
  std::ostringstream os;
  os << std::fixed;
  if (!title.empty()) os << title << '\n';
  os << std::left << std::setw(14) << "Class" << std::right << std::setw(10) << "Precision" << std::setw(10)
     << "Recall" << std::setw(10) << "F1" << std::setw(11) << "Accuracy" << '\n';
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    const auto& c = m.per_class[k];
    const std::string name = k < kLabelNames.size() ? std::string(kLabelNames[k]) : std::to_string(k);
    os << std::left << std::setw(14) << name << std::right << std::setprecision(2) << std::setw(10) << c.precision
       << std::setw(10) << c.recall << std::setw(10) << c.f1 << std::setw(11) << c.accuracy
       << (c.degenerate ? "  *" : "") << '\n';
  }
  os << std::setprecision(2) << "Total accuracy " << m.total_accuracy << "   MCC " << m.mcc << '\n';
  bool any = false;
  for (const auto& c : m.per_class) any = any || c.degenerate;
  if (any) os << "* class never predicted or never present; 0/0 reported as 0\n";
  return os.str();
}

}  // namespace stutternet
