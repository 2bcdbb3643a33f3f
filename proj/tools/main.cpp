// stutternet command-line tool.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stutternet/stutternet.hpp"

namespace fs = std::filesystem;
using namespace stutternet;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string config;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--jobs", c.jobs, "Worker threads (results do not depend on this)")->check(CLI::PositiveNumber);
  if (with_config) cmd->add_option("--config", c.config, "Experiment config JSON")->check(CLI::ExistingFile);
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::optional<fs::path> cache_dir() {
  if (const char* env = std::getenv("STUTTERNET_CACHE"); env && *env) return fs::path(env);
  return std::nullopt;
}

Dataset load_dataset(const std::string& manifest, const MfccConfig& mfcc, bool cmvn, int jobs) {
  const Manifest m = read_manifest(manifest);
  Dataset data = build_dataset(m, {mfcc, cmvn, jobs, cache_dir()});
  if (data.empty()) throw ShapeError("manifest " + manifest + " yields no 4 s segments");
  std::cerr << "loaded " << data.size() << " segments from " << m.entries.size() << " files\n";
  return data;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

int run_extract(const std::string& manifest, const fs::path& out_dir, const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const Manifest m = read_manifest(manifest);
  fs::create_directories(out_dir);
  const Dataset data = build_dataset(m, {cfg.features, false, c.jobs, cache_dir()});
  std::ostringstream index;
  index << "file,source,start_sample,label,speaker,frames,coeffs\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".mfcc";
    save_feature_cache(out_dir / name.str(), ex.features);
    index << name.str() << ',' << csv_field(ex.source) << ',' << ex.start_sample << ','
          << kLabelNames[static_cast<std::size_t>(ex.label)] << ',' << csv_field(ex.speaker) << ','
          << ex.features.frames() << ',' << ex.features.coeffs() << '\n';
  }
  write_text(out_dir / "index.csv", index.str());
  std::cout << "wrote " << data.size() << " feature files to " << out_dir.string() << '\n';
  return kOk;
}

int run_train(const std::string& manifest, const fs::path& out, std::string history_path, const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const Dataset data = load_dataset(manifest, cfg.features, cfg.cmvn, c.jobs);
  const SplitIndices split = split_for_experiment(cfg, data, 0);
  Rng rng(derive_seed(cfg.seed, 0));
  auto trained = train_one(cfg, data, split.train, split.val, rng, [](const EpochRecord& r, const Model&) {
    std::cerr << "epoch " << r.epoch << "  train " << r.train_loss << "  val " << r.val_loss << '\n';
    return true;
  });
  save_model(trained.model, cfg, out);
  if (history_path.empty()) history_path = out.string() + ".history.csv";
  write_text(history_path, history_csv(trained.history));

  const auto eval = evaluate(trained.model, data, split.test, cfg.batch_size);
  std::cout << format_table(summarize(confusion(eval.labels, eval.predictions)),
                            "Test split (" + std::to_string(split.test.size()) + " segments), best epoch " +
                                std::to_string(trained.history.best_epoch));
  std::cout << "model: " << out.string() << "\nhistory: " << history_path << '\n';
  return kOk;
}

void print_result(const ExperimentResult& r, int n) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& e : r.experiments) {
    if (!e.ok) std::cerr << "experiment " << e.index << " failed: " << e.error << '\n';
  }
  std::cout << format_table(r.mean, "Mean over " + std::to_string(n - r.failed()) + " experiments") << '\n'
            << format_table(r.pooled, "Pooled confusion matrix");
}

int run_evaluate(const std::string& manifest, const std::string& out, const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const Dataset data = load_dataset(manifest, cfg.features, cfg.cmvn, c.jobs);
  const ExperimentResult r = cross_validate(cfg, data, c.jobs);
  print_result(r, cfg.n_experiments);
  if (!out.empty()) write_text(out, report_json(cfg, r).dump(2) + "\n");
  return r.failed() > 0 ? kNumeric : kOk;
}

int run_predict(const std::string& model_path, const std::string& wav, const Common&) {
  const LoadedModel loaded = load_model(model_path);
  const AudioClip clip = resample_to_16k(load_wav(wav));
  const auto segments = segment(clip, Label::Fluent);
  if (segments.empty()) throw ShapeError(wav + " is shorter than one 4 s segment");

  std::cout << "segment,start_s";
  for (auto n : kLabelNames) std::cout << ',' << n;
  std::cout << ",prediction\n" << std::setprecision(9);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    FeatureMatrix f = extract_model_features(segments[i], loaded.config.features);
    if (loaded.config.cmvn) apply_cmvn(f);
    const Matrix<float> logits = loaded.model.infer(f.data.cast<float>(), 1);
    const Matrix<double> post = nn::softmax(Matrix<double>(logits.cast<double>()));
    const int label = argmax_rows(post).front();
    std::cout << i << ',' << static_cast<double>(segments[i].start_sample()) / kSampleRate;
    for (Eigen::Index k = 0; k < post.cols(); ++k) std::cout << ',' << post(0, k);
    std::cout << ',' << kLabelNames[static_cast<std::size_t>(label)] << '\n';
  }
  return kOk;
}

int run_embed(const std::string& model_path, const std::string& manifest, const fs::path& out, const Common& c) {
  const LoadedModel loaded = load_model(model_path);
  const Dataset data = load_dataset(manifest, loaded.config.features, loaded.config.cmvn, c.jobs);
  std::ostringstream os;
  os << std::setprecision(9) << "source,start_sample,label";
  for (int h = 0; h < loaded.config.model.hidden; ++h) os << ",e" << h;
  os << '\n';
  for (const auto& ex : data) {
    const Matrix<float> e = loaded.model.embed(ex.features.data.cast<float>(), 1);
    os << csv_field(ex.source) << ',' << ex.start_sample << ',' << kLabelNames[static_cast<std::size_t>(ex.label)];
    for (Eigen::Index h = 0; h < e.cols(); ++h) os << ',' << e(0, h);
    os << '\n';
  }
  write_text(out, os.str());
  std::cout << "wrote " << data.size() << " embeddings to " << out.string() << '\n';
  return kOk;
}

int run_sweep(const std::string& axis_text, const std::string& manifest, std::vector<int> values,
              const std::string& out, const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const SweepAxis axis = parse_axis(axis_text);
  if (values.empty()) values = default_sweep_values(axis);
  const Manifest m = read_manifest(manifest);
  const auto provider = [&](const MfccConfig& mfcc) {
    std::cerr << "extracting features (n_mels " << mfcc.n_mels << ")\n";
    return build_dataset(m, {mfcc, cfg.cmvn, c.jobs, cache_dir()});
  };
  const auto rows = sweep(cfg, axis, values, provider, c.jobs);
  int failed = 0;
  for (const auto& r : rows) {
    failed += r.result.failed();
    std::cout << format_table(r.result.mean, std::string(axis_name(axis)) + " = " + std::to_string(r.value) +
                                                 (r.baseline ? " (baseline)" : ""))
              << '\n';
  }
  const std::string csv = sweep_csv(rows);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(out, csv);
    write_text(fs::path(out).replace_extension(".json"), sweep_json(rows).dump(2) + "\n");
  }
  return failed > 0 ? kNumeric : kOk;
}

int run_report(const std::string& in) {
  std::ifstream f(in);
  if (!f) throw IoError("cannot open " + in);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(in + ": " + e.what());
  }
  if (j.value("schema", std::string{}) != kReportSchema) {
    throw ParseError(in + " is not a " + std::string(kReportSchema) + " report");
  }
  try {
    const int n = j.at("n_experiments").get<int>();
    const int failed = j.at("failed_experiments").get<int>();
    std::cout << format_table(summary_from_json(j.at("mean")),
                              "Mean over " + std::to_string(n - failed) + " experiments")
              << '\n'
              << format_table(summary_from_json(j.at("pooled")), "Pooled confusion matrix");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(in + ": " + e.what());
  }
  return kOk;
}

int run_synth(const fs::path& out, int per_class, const Common& c) {
  const auto manifest = write_synthetic_corpus(out, per_class, c.seed.value_or(0));
  std::cout << "wrote " << per_class * kNumClasses << " clips; manifest " << manifest.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StutterNet: TDNN stuttering classifier over MFCC features"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "stutternet 1.0.0");

  Common common;
  std::string manifest, out, model, wav, history, axis, in;
  std::vector<int> values;
  int per_class = 10;

  auto* extract = app.add_subcommand("extract-features", "Write one feature file per 4 s segment plus index.csv");
  extract->add_option("--manifest", manifest, "CSV with path,label[,speaker]")->required();
  extract->add_option("--out", out, "Output directory")->required();
  add_common(extract, common, true);

  auto* train = app.add_subcommand("train", "Train one model on a single split");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--out", out, "Model file to write")->required();
  train->add_option("--history", history, "History CSV (default: <out>.history.csv)");
  add_common(train, common, true);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Repeated random-split evaluation with a metrics report");
  evaluate_cmd->add_option("--manifest", manifest)->required();
  evaluate_cmd->add_option("--out", out, "Report JSON to write");
  add_common(evaluate_cmd, common, true);

  auto* predict = app.add_subcommand("predict", "Per-segment class posteriors for one WAV file");
  predict->add_option("--model", model)->required()->check(CLI::ExistingFile);
  predict->add_option("--wav", wav)->required()->check(CLI::ExistingFile);
  add_common(predict, common, false);

  auto* embed = app.add_subcommand("embed", "Penultimate-layer vectors for every segment");
  embed->add_option("--model", model)->required()->check(CLI::ExistingFile);
  embed->add_option("--manifest", manifest)->required();
  embed->add_option("--out", out, "CSV to write")->required();
  add_common(embed, common, false);

  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate a grid over one hyperparameter");
  sweep_cmd->add_option("--axis", axis, "mels | context | layer")
      ->required()
      ->check(CLI::IsMember({"mels", "context", "layer"}));
  sweep_cmd->add_option("--manifest", manifest)->required();
  sweep_cmd->add_option("--values", values, "Grid values (default: the standard grid for the axis)")->delimiter(',');
  sweep_cmd->add_option("--out", out, "Results CSV; a .json twin is written alongside");
  add_common(sweep_cmd, common, true);

  auto* report = app.add_subcommand("report", "Print the tables of a saved report");
  report->add_option("--in", in, "Report JSON")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic labelled corpus with manifest.csv");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--per-class", per_class, "Clips per class")->check(CLI::PositiveNumber);
  add_common(synth, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*extract) return run_extract(manifest, out, common);
    if (*train) return run_train(manifest, out, history, common);
    if (*evaluate_cmd) return run_evaluate(manifest, out, common);
    if (*predict) return run_predict(model, wav, common);
    if (*embed) return run_embed(model, manifest, out, common);
    if (*sweep_cmd) return run_sweep(axis, manifest, values, out, common);
    if (*report) return run_report(in);
    if (*synth) return run_synth(out, per_class, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.category()) {
      case ErrorCategory::usage:
        return kUsage;
      case ErrorCategory::numeric:
        return kNumeric;
      case ErrorCategory::data:
        return kData;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
