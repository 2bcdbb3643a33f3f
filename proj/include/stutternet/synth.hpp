#pragma once

// Synthetic class-conditional 4 s clips with distinct tone/noise signatures.
// Used for smoke tests and demos; nothing here resembles real stuttering.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "stutternet/audio_io.hpp"
#include "stutternet/error.hpp"
#include "stutternet/rng.hpp"

namespace stutternet {

namespace detail {

inline double harmonic(double phase) {
  return std::sin(phase) + 0.5 * std::sin(2.0 * phase) + 0.25 * std::sin(3.0 * phase);
}

}  // namespace detail

/// One 64000-sample clip for `label`:
///   Repetition   ~200 Hz harmonic tone gated on/off at 4-6 Hz
///   Prolongation ~140 Hz steady harmonic tone
///   Block        near-silence with a single short noise burst
///   Fluent       white noise with slow amplitude modulation
inline std::vector<float> synth_clip(Label label, Rng& rng) {
  constexpr double sr = kSampleRate;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<float> x(kSegmentSamples);
  const double noise_floor = 0.003;
  switch (label) {
    case Label::Repetition: {
      const double f0 = rng.uniform(180.0, 220.0);
      const double gate = rng.uniform(4.0, 6.0);
      const double offset = rng.uniform(0.0, 1.0);
      for (std::size_t n = 0; n < x.size(); ++n) {
        const double t = static_cast<double>(n) / sr;
        const bool on = std::fmod(t * gate + offset, 1.0) < 0.5;
        x[n] = static_cast<float>((on ? 0.3 * detail::harmonic(two_pi * f0 * t) : 0.0) + noise_floor * rng.normal());
      }
      break;
    }
    case Label::Prolongation: {
      const double f0 = rng.uniform(120.0, 160.0);
      const double phase = rng.uniform(0.0, two_pi);
      for (std::size_t n = 0; n < x.size(); ++n) {
        const double t = static_cast<double>(n) / sr;
        x[n] = static_cast<float>(0.3 * detail::harmonic(two_pi * f0 * t + phase) + noise_floor * rng.normal());
      }
      break;
    }
    case Label::Block: {
      const auto burst_len = static_cast<std::size_t>(0.15 * sr);
      const std::size_t start = rng.below(x.size() - burst_len);
      for (std::size_t n = 0; n < x.size(); ++n) {
        const bool in_burst = n >= start && n < start + burst_len;
        x[n] = static_cast<float>((in_burst ? 0.4 : noise_floor) * rng.normal());
      }
      break;
    }
    case Label::Fluent: {
      const double rate = rng.uniform(2.0, 4.0);
      for (std::size_t n = 0; n < x.size(); ++n) {
        const double t = static_cast<double>(n) / sr;
        const double env = 0.6 + 0.4 * std::sin(two_pi * rate * t);
        x[n] = static_cast<float>(0.15 * env * rng.normal());
      }
      break;
    }
  }
  for (auto& v : x) v = std::clamp(v, -1.0f, 1.0f);
  return x;
}

/// Segments for `per_class` clips of every class, in class-major order.
inline std::vector<AudioSegment> synth_segments(int per_class, std::uint64_t seed) {
  if (per_class < 1) throw UsageError("per_class must be >= 1");
  Rng rng(seed);
  std::vector<AudioSegment> out;
  for (int k = 0; k < kNumClasses; ++k) {
    for (int i = 0; i < per_class; ++i) {
      out.emplace_back(synth_clip(static_cast<Label>(k), rng), static_cast<Label>(k), "synthetic", 0);
    }
  }
  return out;
}

/// Writes `per_class` 16-bit WAVs per class plus `manifest.csv` into `dir`.
/// Returns the manifest path.
inline std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, int per_class,
                                                    std::uint64_t seed) {
  if (per_class < 1) throw UsageError("per_class must be >= 1");
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  const auto manifest_path = dir / "manifest.csv";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot write " + manifest_path.string());
  manifest << "path,label,speaker\n";
  for (int k = 0; k < kNumClasses; ++k) {
    const auto label = static_cast<Label>(k);
    for (int i = 0; i < per_class; ++i) {
      const std::string name = std::string(label_name(label)) + "_" + std::to_string(i) + ".wav";
      save_wav(dir / name, synth_clip(label, rng), kSampleRate, WavEncoding::pcm16);
      manifest << name << ',' << label_name(label) << ",spk" << (i % 4) << '\n';
    }
  }
  return manifest_path;
}

}  // namespace stutternet
