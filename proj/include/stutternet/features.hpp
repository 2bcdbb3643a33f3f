#pragma once

// MFCC front-end: periodic Hann frames, power spectrum, HTK mel filterbank,
// dB log with a power floor and an orthonormal DCT-II.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stutternet/audio_io.hpp"
#include "stutternet/error.hpp"
#include "stutternet/fft.hpp"
#include "stutternet/json_util.hpp"
#include "stutternet/matrix.hpp"

namespace stutternet {

struct MfccConfig {
  int sample_rate = kSampleRate;
  int win_len = 400;   // 25 ms
  int hop = 192;       // 12 ms
  int fft_size = 512;
  int n_mels = 20;
  int n_mfcc = 20;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  bool operator==(const MfccConfig&) const = default;

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("mfcc: sample_rate must be positive");
    if (win_len < 1) throw ConfigError("mfcc: win_len must be >= 1");
    if (hop < 1) throw ConfigError("mfcc: hop must be >= 1");
    if (fft_size < win_len) throw ConfigError("mfcc: fft_size must be >= win_len");
    if (!is_power_of_two(static_cast<std::size_t>(fft_size))) throw ConfigError("mfcc: fft_size must be a power of two");
    if (n_mels < 1) throw ConfigError("mfcc: n_mels must be >= 1");
    if (n_mfcc < 1 || n_mfcc > n_mels) throw ConfigError("mfcc: need 1 <= n_mfcc <= n_mels");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
      throw ConfigError("mfcc: need 0 <= fmin < fmax <= sample_rate/2");
    }
    if (!(log_floor > 0.0)) throw ConfigError("mfcc: log_floor must be positive");
  }
};

inline void to_json(nlohmann::json& j, const MfccConfig& c) {
  j = nlohmann::json{{"sample_rate", c.sample_rate}, {"win_len", c.win_len}, {"hop", c.hop},
                     {"fft_size", c.fft_size},       {"n_mels", c.n_mels},   {"n_mfcc", c.n_mfcc},
                     {"fmin", c.fmin},               {"fmax", c.fmax},       {"log_floor", c.log_floor}};
}

inline void from_json(const nlohmann::json& j, MfccConfig& c) {
  constexpr std::string_view where = "features";
  detail::require_known_keys(j, {"sample_rate", "win_len", "hop", "fft_size", "n_mels", "n_mfcc", "fmin", "fmax", "log_floor"},
                             where);
  detail::read_optional(j, "sample_rate", c.sample_rate, where);
  detail::read_optional(j, "win_len", c.win_len, where);
  detail::read_optional(j, "hop", c.hop, where);
  detail::read_optional(j, "fft_size", c.fft_size, where);
  detail::read_optional(j, "n_mels", c.n_mels, where);
  detail::read_optional(j, "n_mfcc", c.n_mfcc, where);
  detail::read_optional(j, "fmin", c.fmin, where);
  detail::read_optional(j, "fmax", c.fmax, where);
  detail::read_optional(j, "log_floor", c.log_floor, where);
}

/// T x C MFCC frames plus the configuration that produced them.
struct FeatureMatrix {
  Matrix<double> data;
  MfccConfig config;

  int frames() const { return static_cast<int>(data.rows()); }
  int coeffs() const { return static_cast<int>(data.cols()); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// n_mels + 2 band edges in Hz, uniform on the mel scale.
inline std::vector<double> mel_band_edges(int n_mels, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  edges.front() = fmin;
  edges.back() = fmax;
  return edges;
}

/// Triangular filters evaluated at FFT bin centre frequencies, unit peak, no
/// area normalisation. Result is n_mels x (fft_size/2 + 1).
inline Matrix<double> mel_filterbank(int n_mels, int fft_size, int sample_rate, double fmin, double fmax) {
  if (n_mels < 1) throw ConfigError("mel_filterbank: n_mels must be >= 1");
  if (fft_size < 2) throw ConfigError("mel_filterbank: fft_size must be >= 2");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("mel_filterbank: need 0 <= fmin < fmax <= sample_rate/2");
  }
  const auto edges = mel_band_edges(n_mels, fmin, fmax);
  const int bins = fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / fft_size;

  Matrix<double> fb = Matrix<double>::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
    double total = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      const double w = std::max(0.0, std::min((f - lo) / (centre - lo), (hi - f) / (hi - centre)));
      fb(m, k) = w;
      total += w;
    }
    if (total == 0.0) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " covers no FFT bin; use fewer mel bands or a larger fft_size");
    }
  }
  return fb;
}

/// DCT-II with orthonormal scaling.
inline std::vector<double> dct_ortho(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  if (n == 0) return y;
  const double s0 = std::sqrt(1.0 / static_cast<double>(n));
  const double sk = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += x[j] * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(j) + 1.0) /
                             (2.0 * static_cast<double>(n)));
    }
    y[k] = (k == 0 ? s0 : sk) * acc;
  }
  return y;
}

/// The n x n orthonormal DCT-II matrix (row k = basis vector k).
inline Matrix<double> dct_ortho_matrix(int n) {
  Matrix<double> d(n, n);
  for (int k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int j = 0; j < n; ++j) d(k, j) = s * std::cos(std::numbers::pi * k * (2.0 * j + 1.0) / (2.0 * n));
  }
  return d;
}

/// Number of full windows; zero when the signal is shorter than one window.
constexpr std::int64_t frame_count(std::int64_t length, std::int64_t win_len, std::int64_t hop) {
  return length < win_len ? 0 : (length - win_len) / hop + 1;
}

inline std::vector<double> periodic_hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// |FFT|^2 of every Hann-windowed frame: T x (fft_size/2 + 1).
template <class Sample>
Matrix<double> power_spectrogram(std::span<const Sample> samples, const MfccConfig& cfg) {
  cfg.validate();
  for (const auto s : samples) {
    if (!std::isfinite(static_cast<double>(s))) throw NumericsError("extract_mfcc: non-finite sample");
  }
  const auto frames = frame_count(static_cast<std::int64_t>(samples.size()), cfg.win_len, cfg.hop);
  if (frames < 1) {
    throw ShapeError("extract_mfcc: signal of " + std::to_string(samples.size()) +
                     " samples is shorter than one window");
  }
  const int bins = cfg.fft_size / 2 + 1;
  const auto window = periodic_hann(cfg.win_len);

  Matrix<double> power(frames, bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::int64_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const std::size_t start = static_cast<std::size_t>(t * cfg.hop);
    for (int i = 0; i < cfg.win_len; ++i) buf[i] = static_cast<double>(samples[start + i]) * window[i];
    fft_inplace(buf);
    for (int k = 0; k < bins; ++k) power(t, k) = std::norm(buf[k]);
  }
  return power;
}

/// Mel filterbank energies per frame: T x n_mels.
template <class Sample>
Matrix<double> mel_energies(std::span<const Sample> samples, const MfccConfig& cfg) {
  const Matrix<double> fb = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin, cfg.fmax);
  return power_spectrogram(samples, cfg) * fb.transpose();
}

template <class Sample>
FeatureMatrix extract_mfcc(std::span<const Sample> samples, const MfccConfig& cfg) {
  Matrix<double> logmel = mel_energies(samples, cfg);
  logmel = logmel.unaryExpr([&](double p) { return 10.0 * std::log10(std::max(p, cfg.log_floor)); });
  const Matrix<double> dct = dct_ortho_matrix(cfg.n_mels).topRows(cfg.n_mfcc);
  FeatureMatrix out{logmel * dct.transpose(), cfg};
  if (!out.data.allFinite()) throw NumericsError("extract_mfcc: non-finite coefficient");
  return out;
}

inline FeatureMatrix extract_mfcc(const AudioSegment& segment, const MfccConfig& cfg) {
  return extract_mfcc(segment.samples(), cfg);
}

/// Per-utterance mean/variance normalisation of every coefficient over time.
inline void apply_cmvn(FeatureMatrix& f, double eps = 1e-10) {
  const RowVector<double> mean = f.data.colwise().mean();
  f.data.rowwise() -= mean;
  const RowVector<double> sd = (f.data.array().square().colwise().mean() + eps).sqrt().matrix();
  f.data.array().rowwise() /= sd.array();
}

// Feature cache: "MFCC1", u32 T, u32 C, T*C float32 row-major, u32 length +
// MfccConfig JSON. All integers little-endian.

inline std::string encode_feature_cache(const FeatureMatrix& f) {
  std::string out = "MFCC1";
  detail::put_u32(out, static_cast<std::uint32_t>(f.frames()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.coeffs()));
  for (int t = 0; t < f.frames(); ++t) {
    for (int c = 0; c < f.coeffs(); ++c) {
      const float v = static_cast<float>(f.data(t, c));
      std::uint32_t raw;
      std::memcpy(&raw, &v, sizeof raw);
      detail::put_u32(out, raw);
    }
  }
  const std::string cfg = nlohmann::json(f.config).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  return out;
}

inline FeatureMatrix decode_feature_cache(std::span<const unsigned char> bytes, const std::string& source = {}) {
  auto need = [&](std::size_t pos, std::size_t n) {
    if (bytes.size() < pos || bytes.size() - pos < n) throw ParseError(source + ": truncated feature cache");
  };
  need(0, 13);
  if (std::memcmp(bytes.data(), "MFCC1", 5) != 0) throw ParseError(source + ": bad feature cache magic");
  const std::uint32_t frames = detail::read_u32(bytes.data() + 5);
  const std::uint32_t coeffs = detail::read_u32(bytes.data() + 9);
  std::size_t pos = 13;
  const std::size_t count = static_cast<std::size_t>(frames) * coeffs;
  need(pos, count * 4);
  FeatureMatrix f;
  f.data.resize(frames, coeffs);
  for (std::size_t i = 0; i < count; ++i, pos += 4) {
    const std::uint32_t raw = detail::read_u32(bytes.data() + pos);
    float v;
    std::memcpy(&v, &raw, sizeof v);
    f.data(static_cast<Eigen::Index>(i / coeffs), static_cast<Eigen::Index>(i % coeffs)) = v;
  }
  need(pos, 4);
  const std::uint32_t len = detail::read_u32(bytes.data() + pos);
  pos += 4;
  need(pos, len);
  try {
    f.config = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + len))
                   .get<MfccConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": bad feature cache config: " + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(source + ": bad feature cache config: " + e.what());
  }
  if (pos + len != bytes.size()) throw ParseError(source + ": trailing bytes in feature cache");
  if (static_cast<int>(coeffs) != f.config.n_mfcc) throw ParseError(source + ": coefficient count disagrees with config");
  return f;
}

inline void save_feature_cache(const std::filesystem::path& path, const FeatureMatrix& f) {
  const std::string bytes = encode_feature_cache(f);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline FeatureMatrix load_feature_cache(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_feature_cache(bytes, path.string());
}

}  // namespace stutternet
