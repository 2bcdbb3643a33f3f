#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "stutternet/training.hpp"

using namespace stutternet;

namespace {

// Separable toy features: each class shifts a different block of coefficients.
Dataset toy_dataset(std::size_t n, int coeffs, std::uint64_t seed, int frames = 24) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.label = static_cast<int>(i % kNumClasses);
    e.speaker = "spk" + std::to_string(i % 5);
    e.features.data.resize(frames, coeffs);
    for (Eigen::Index j = 0; j < e.features.data.size(); ++j) e.features.data.data()[j] = rng.normal();
    for (int c = e.label; c < coeffs; c += kNumClasses) e.features.data.col(c).array() += 1.5;
    d.push_back(std::move(e));
  }
  return d;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.model.hidden = 8;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.n_experiments = 3;
  cfg.optimizer.lr = 1e-3;
  cfg.seed = 11;
  return cfg;
}

void expect_partition(const SplitIndices& s, std::size_t n) {
  std::vector<std::size_t> all;
  all.insert(all.end(), s.train.begin(), s.train.end());
  all.insert(all.end(), s.val.begin(), s.val.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  ASSERT_EQ(all.size(), n);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(all[i], i);
}

}  // namespace

TEST(Split, EightyTenTen) {
  Rng rng(1);
  const auto s = random_split(100, {}, rng);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  expect_partition(s, 100);
}

TEST(Split, DisjointAndCoveringForManySizes) {
  for (std::size_t n = 10; n < 110; ++n) {
    Rng rng(n);
    const auto s = random_split(n, {}, rng);
    expect_partition(s, n);
    EXPECT_FALSE(s.train.empty());
    EXPECT_FALSE(s.val.empty());
    EXPECT_FALSE(s.test.empty());
    EXPECT_EQ(s.train.size(), static_cast<std::size_t>(0.8 * n + 1e-9));
  }
  Rng rng(0);
  EXPECT_THROW(random_split(0, {}, rng), ConfigError);
  EXPECT_THROW(random_split(3, {}, rng), ConfigError);
}

TEST(Split, DeterministicPerSeed) {
  Rng a(42), b(42), c(43);
  const auto x = random_split(57, {}, a);
  const auto y = random_split(57, {}, b);
  const auto z = random_split(57, {}, c);
  EXPECT_EQ(x.train, y.train);
  EXPECT_EQ(x.test, y.test);
  EXPECT_NE(x.train, z.train);
}

TEST(Split, KfoldTestFoldsPartition) {
  const std::size_t n = 53;
  std::vector<int> seen(n, 0);
  for (int f = 0; f < 10; ++f) {
    const auto s = kfold_split(n, 10, f, 5);
    expect_partition(s, n);
    for (auto i : s.test) ++seen[i];
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
  EXPECT_THROW(kfold_split(n, 2, 0, 5), ConfigError);
}

TEST(Split, SpeakerDisjoint) {
  const Dataset d = toy_dataset(60, 4, 3);
  Rng rng(8);
  SplitFractions f{0.6, 0.2, 0.2};
  const auto s = speaker_split(d, f, rng);
  expect_partition(s, d.size());
  auto speakers = [&](const std::vector<std::size_t>& idx) {
    std::set<std::string> out;
    for (auto i : idx) out.insert(d[i].speaker);
    return out;
  };
  const auto tr = speakers(s.train), va = speakers(s.val), te = speakers(s.test);
  for (const auto& sp : te) {
    EXPECT_EQ(tr.count(sp), 0u);
    EXPECT_EQ(va.count(sp), 0u);
  }
  for (const auto& sp : va) EXPECT_EQ(tr.count(sp), 0u);
}

TEST(EarlyStopping, StopsAfterPatienceWithoutImprovement) {
  const std::vector<double> losses{1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0, 1.01, 0.5};
  EarlyStopping es(7);
  int stopped_after = 0;
  for (double l : losses) {
    es.update(l);
    if (es.should_stop()) {
      stopped_after = es.epochs_seen();
      break;
    }
  }
  EXPECT_EQ(stopped_after, 9);
  EXPECT_EQ(es.best_epoch(), 2);
  EXPECT_EQ(es.best_loss(), 0.9);
}

TEST(EarlyStopping, EqualLossIsNotImprovement) {
  EarlyStopping es(2);
  EXPECT_TRUE(es.update(1.0));
  EXPECT_FALSE(es.update(1.0));
  EXPECT_FALSE(es.update(1.0));
  EXPECT_TRUE(es.should_stop());
  EXPECT_THROW(es.update(std::nan("")), NumericsError);
  EXPECT_THROW(EarlyStopping(0), ConfigError);
}

TEST(Training, StrictlyImprovingRunsToMaxEpochs) {
  EarlyStopping es(7);
  for (int e = 0; e < 50; ++e) {
    es.update(1.0 - 0.01 * e);
    ASSERT_FALSE(es.should_stop());
  }
  EXPECT_EQ(es.best_epoch(), 50);

  // A model that keeps improving on easy data never triggers the stop.
  ExperimentConfig cfg = tiny_config();
  cfg.max_epochs = 4;
  cfg.patience = 100;
  const Dataset d = toy_dataset(40, 20, 2);
  std::vector<std::size_t> tr(30), va(10);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), 30);
  Rng rng(1);
  const auto out = train_one(cfg, d, tr, va, rng);
  EXPECT_EQ(out.history.epochs.size(), 4u);
  EXPECT_FALSE(out.history.early_stopped);
}

TEST(Training, EarlyStopRestoresBestEpoch) {
  ExperimentConfig cfg = tiny_config();
  cfg.max_epochs = 40;
  cfg.patience = 2;
  cfg.optimizer.lr = 3e-2;
  const Dataset d = toy_dataset(40, 20, 5);
  std::vector<std::size_t> tr(30), va(10);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), 30);
  Rng rng(3);
  const auto out = train_one(cfg, d, tr, va, rng);
  const auto& h = out.history;
  ASSERT_GE(h.best_epoch, 1);
  double best = 1e300;
  for (const auto& e : h.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(h.best_val_loss, best);
  EXPECT_EQ(h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].val_loss, best);
  ASSERT_TRUE(h.early_stopped);
  EXPECT_EQ(static_cast<int>(h.epochs.size()), h.best_epoch + cfg.patience);
  // The returned model reproduces the best validation loss.
  EXPECT_NEAR(evaluate(out.model, d, va, cfg.batch_size).loss, best, 1e-6);
}

TEST(Training, TrainingLossDescends) {
  ExperimentConfig cfg = tiny_config();
  cfg.model.hidden = 16;
  cfg.max_epochs = 30;
  cfg.patience = 100;
  const Dataset d = toy_dataset(64, 20, 9);
  std::vector<std::size_t> tr(56), va(8);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), 56);
  Rng rng(4);
  const auto out = train_one(cfg, d, tr, va, rng);
  ASSERT_EQ(out.history.epochs.size(), 30u);
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 5; ++i) s += out.history.epochs[i].train_loss;
    return s / 5.0;
  };
  EXPECT_LT(window(25), window(0));
  EXPECT_LT(window(25), window(12));
}

TEST(Training, CallbackCanStop) {
  ExperimentConfig cfg = tiny_config();
  cfg.max_epochs = 10;
  const Dataset d = toy_dataset(20, 20, 1);
  std::vector<std::size_t> tr(16), va(4);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), 16);
  Rng rng(2);
  const auto out = train_one(cfg, d, tr, va, rng, [](const EpochRecord& r, const Model&) { return r.epoch < 2; });
  EXPECT_EQ(out.history.epochs.size(), 2u);
  EXPECT_THROW(train_one(cfg, d, std::span(tr).first(1), va, rng), ConfigError);
}

TEST(CrossValidate, MeanAggregationAndDeterminism) {
  const ExperimentConfig cfg = tiny_config();
  const Dataset d = toy_dataset(40, 20, 6);
  const auto r1 = cross_validate(cfg, d, 1);
  const auto r2 = cross_validate(cfg, d, 3);
  ASSERT_EQ(r1.experiments.size(), 3u);
  EXPECT_EQ(r1.failed(), 0);

  double acc = 0.0, m = 0.0;
  ConfusionMatrix pooled;
  for (const auto& e : r1.experiments) {
    acc += e.metrics.total_accuracy;
    m += e.metrics.mcc;
    pooled += e.confusion;
    EXPECT_EQ(e.n_train + e.n_val + e.n_test, d.size());
  }
  EXPECT_NEAR(r1.mean.total_accuracy, acc / 3.0, 1e-12);
  EXPECT_NEAR(r1.mean.mcc, m / 3.0, 1e-12);
  EXPECT_EQ(r1.pooled_confusion, pooled);
  EXPECT_EQ(r1.pooled.mcc, mcc(pooled));

  EXPECT_EQ(report_json(cfg, r1).dump(), report_json(cfg, r2).dump());
  EXPECT_EQ(report_json(cfg, r1).dump(), report_json(cfg, cross_validate(cfg, d, 1)).dump());
  EXPECT_EQ(report_json(cfg, r1)["schema"], std::string(kReportSchema));
}

TEST(CrossValidate, WarnsOnMissingClass) {
  Dataset d = toy_dataset(40, 20, 6);
  std::erase_if(d, [](const Example& e) { return e.label == 2; });
  ExperimentConfig cfg = tiny_config();
  cfg.n_experiments = 1;
  cfg.max_epochs = 1;
  const auto r = cross_validate(cfg, d);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("Block"), std::string::npos);
}

TEST(Sweep, OneRowPerValuePlusBaseline) {
  ExperimentConfig cfg = tiny_config();
  cfg.n_experiments = 1;
  cfg.max_epochs = 1;
  const Dataset d = toy_dataset(30, 20, 7);
  int provided = 0;
  const auto provider = [&](const MfccConfig&) {
    ++provided;
    return d;
  };
  const auto rows = sweep(cfg, SweepAxis::layer, {4, 6, 12, 16}, provider);
  ASSERT_EQ(rows.size(), 5u);
  std::vector<int> values;
  for (const auto& r : rows) values.push_back(r.value);
  EXPECT_EQ(values, (std::vector<int>{4, 6, 8, 12, 16}));
  EXPECT_TRUE(rows[2].baseline);
  EXPECT_EQ(rows[2].config, cfg);
  EXPECT_EQ(rows[4].config.model.hidden, 16);
  EXPECT_EQ(provided, 1);

  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(sweep_json(rows)["rows"].size(), 5u);
}

TEST(Sweep, AxisHelpers) {
  const ExperimentConfig base;
  EXPECT_EQ(default_sweep_values(SweepAxis::layer), (std::vector<int>{64, 128, 256, 1024}));
  EXPECT_EQ(default_sweep_values(SweepAxis::mels), (std::vector<int>{10, 30, 40, 50}));
  EXPECT_EQ(default_sweep_values(SweepAxis::context), (std::vector<int>{3, 7, 9, 11}));
  EXPECT_EQ(with_axis(base, SweepAxis::mels, 10).features.n_mfcc, 10);
  EXPECT_EQ(with_axis(base, SweepAxis::mels, 40).features.n_mfcc, base.features.n_mfcc);
  EXPECT_EQ(with_axis(base, SweepAxis::context, 9).model.context, 9);
  EXPECT_THROW(with_axis(base, SweepAxis::context, 4), ConfigError);
  EXPECT_THROW(parse_axis("depth"), UsageError);
}
