#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "stutternet/audio_io.hpp"
#include "stutternet/features.hpp"
#include "stutternet/matrix.hpp"

namespace stutternet {

/// One 4 s segment's features with its label and provenance.
struct Example {
  FeatureMatrix features;
  int label = 0;
  std::string speaker;
  std::string source;
  std::size_t start_sample = 0;
};

using Dataset = std::vector<Example>;

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// thrown (lowest index wins) is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::optional<std::size_t> failed_at;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failed_at || i < *failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Cache file name for one segment: a hash of the audio file identity
/// (absolute path, size, modification time), the segment offset and the
/// MFCC settings.
inline std::string feature_cache_name(const std::filesystem::path& audio, std::size_t start_sample,
                                      const MfccConfig& cfg) {
  std::error_code ec;
  const auto abs = std::filesystem::absolute(audio, ec);
  std::ostringstream key;
  key << (ec ? audio.string() : abs.lexically_normal().string()) << '\n';
  key << std::filesystem::file_size(audio, ec) << '\n';
  const auto mtime = std::filesystem::last_write_time(audio, ec);
  key << (ec ? 0 : mtime.time_since_epoch().count()) << '\n';
  key << start_sample << '\n' << nlohmann::json(cfg).dump();
  std::ostringstream name;
  name << std::hex << std::setw(16) << std::setfill('0') << detail::fnv1a(key.str()) << ".mfcc";
  return name.str();
}

/// MFCCs rounded to float32, the precision the model consumes, so cached and
/// freshly extracted features agree exactly.
inline FeatureMatrix extract_model_features(const AudioSegment& seg, const MfccConfig& cfg) {
  FeatureMatrix f = extract_mfcc(seg, cfg);
  f.data = f.data.cast<float>().cast<double>();
  return f;
}

struct DatasetOptions {
  MfccConfig mfcc;
  bool cmvn = false;
  int jobs = 1;
  std::optional<std::filesystem::path> cache_dir;
};

/// Loads every manifest entry, resamples to 16 kHz, slices 4 s segments and
/// extracts MFCCs. Order follows the manifest, then segment offset.
inline Dataset build_dataset(const Manifest& manifest, const DatasetOptions& opt) {
  opt.mfcc.validate();
  if (opt.cache_dir) std::filesystem::create_directories(*opt.cache_dir);

  std::vector<std::vector<Example>> per_entry(manifest.entries.size());
  parallel_for(manifest.entries.size(), opt.jobs, [&](std::size_t i) {
    const auto& entry = manifest.entries[i];
    const AudioClip clip = resample_to_16k(load_wav(entry.path));
    for (const AudioSegment& seg : segment(clip, entry.label)) {
      FeatureMatrix f;
      std::optional<std::filesystem::path> cached;
      if (opt.cache_dir) cached = *opt.cache_dir / feature_cache_name(entry.path, seg.start_sample(), opt.mfcc);
      if (cached && std::filesystem::exists(*cached)) {
        f = load_feature_cache(*cached);
      } else {
        f = extract_model_features(seg, opt.mfcc);
        if (cached) save_feature_cache(*cached, f);
      }
      if (opt.cmvn) apply_cmvn(f);
      per_entry[i].push_back(
          {std::move(f), static_cast<int>(seg.label()), entry.speaker, entry.path.string(), seg.start_sample()});
    }
  });

  Dataset out;
  for (auto& v : per_entry) {
    for (auto& e : v) out.push_back(std::move(e));
  }
  return out;
}

}  // namespace stutternet
