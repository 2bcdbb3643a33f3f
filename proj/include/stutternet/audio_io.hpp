#pragma once

// WAV decoding, resampling to the 16 kHz analysis rate, fixed 4 s slicing
// and labeled manifests.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stutternet/error.hpp"

namespace stutternet {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kSegmentSamples = 64000;  // 4 s at 16 kHz

enum class Label : int { Repetition = 0, Prolongation = 1, Block = 2, Fluent = 3 };

inline constexpr int kNumClasses = 4;

inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {
    "Repetition", "Prolongation", "Block", "Fluent"};

inline std::string_view label_name(Label l) { return kLabelNames.at(static_cast<int>(l)); }

/// Case-insensitive label lookup.
inline std::optional<Label> parse_label(std::string_view text) {
  std::string lower;
  lower.reserve(text.size());
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (int i = 0; i < kNumClasses; ++i) {
    std::string name(kLabelNames[i]);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == name) return static_cast<Label>(i);
  }
  return std::nullopt;
}

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string source_path;
};

/// Exactly 4 s of 16 kHz audio with its clip-level label.
class AudioSegment {
 public:
  AudioSegment(std::vector<float> samples, Label label, std::string source_path = {},
               std::size_t start_sample = 0)
      : samples_(std::move(samples)),
        label_(label),
        source_path_(std::move(source_path)),
        start_sample_(start_sample) {
    if (samples_.size() != kSegmentSamples) {
      throw ShapeError("AudioSegment needs exactly " + std::to_string(kSegmentSamples) +
                       " samples, got " + std::to_string(samples_.size()));
    }
  }

  std::span<const float> samples() const { return samples_; }
  Label label() const { return label_; }
  const std::string& source_path() const { return source_path_; }
  std::size_t start_sample() const { return start_sample_; }

 private:
  std::vector<float> samples_;
  Label label_;
  std::string source_path_;
  std::size_t start_sample_;
};

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes a RIFF/WAVE file holding PCM16 or float32 samples. Channels are
/// averaged to mono; int16 values are scaled by 1/32768.
inline AudioClip decode_wav(std::span<const unsigned char> bytes, std::string source = {}) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ParseError(source + ": not a RIFF/WAVE file");
  }

  std::optional<std::uint16_t> format;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::span<const unsigned char> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) throw ParseError(source + ": chunk overruns file");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw ParseError(source + ": fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      // WAVE_FORMAT_EXTENSIBLE carries the real tag in the sub-format GUID.
      if (*format == 0xFFFE) {
        if (size < 40) throw ParseError(source + ": extensible fmt chunk too short");
        format = read_u16(f + 24);
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.subspan(body, size);
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }

  if (!format) throw ParseError(source + ": missing fmt chunk");
  if (!have_data) throw ParseError(source + ": missing data chunk");
  if (channels == 0) throw ParseError(source + ": zero channels");
  if (rate == 0) throw ParseError(source + ": zero sample rate");

  const bool pcm16 = *format == 1 && bits == 16;
  const bool float32 = *format == 3 && bits == 32;
  if (!pcm16 && !float32) {
    throw UnsupportedFormat(source + ": format tag " + std::to_string(*format) + " with " +
                            std::to_string(bits) + " bits (need PCM16 or float32)");
  }

  const std::size_t width = bits / 8;
  const std::size_t frame_bytes = width * channels;
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw ParseError(source + ": no audio frames");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.source_path = std::move(source);
  clip.samples.resize(frames);
  for (std::size_t n = 0; n < frames; ++n) {
    const unsigned char* p = data.data() + n * frame_bytes;
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch, p += width) {
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(p);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        if (!std::isfinite(v)) throw ParseError(clip.source_path + ": non-finite float sample");
        acc += std::clamp(static_cast<double>(v), -1.0, 1.0);
      }
    }
    clip.samples[n] = static_cast<float>(acc / channels);
  }
  return clip;
}

inline AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_wav(bytes, path.string());
}

enum class WavEncoding { pcm16, float32 };

/// Encodes interleaved samples; `channels` > 1 expects frames laid out
/// channel-interleaved.
inline std::string encode_wav(std::span<const float> samples, int sample_rate,
                              WavEncoding encoding = WavEncoding::pcm16, int channels = 1) {
  using detail::put_u16;
  using detail::put_u32;
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::pcm16 ? 1 : 3);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * (bits / 8)));
  put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : samples) {
    if (encoding == WavEncoding::pcm16) {
      const double scaled = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
    } else {
      std::uint32_t raw;
      std::memcpy(&raw, &s, sizeof raw);
      put_u32(out, raw);
    }
  }
  return out;
}

inline void save_wav(const std::filesystem::path& path, std::span<const float> samples,
                     int sample_rate, WavEncoding encoding = WavEncoding::pcm16) {
  const std::string bytes = encode_wav(samples, sample_rate, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

/// Zero crossings of the interpolation kernel on each side of the centre.
inline constexpr int kResampleTaps = 32;

/// Band-limited conversion to 16 kHz with a Hann-windowed sinc kernel whose
/// cutoff is min(1, 16000/rate) of the input Nyquist.
inline AudioClip resample_to_16k(const AudioClip& clip) {
  if (clip.sample_rate < 8000) {
    throw UnsupportedRate(clip.source_path + ": sample rate " + std::to_string(clip.sample_rate) +
                          " Hz is below 8000 Hz");
  }
  if (clip.sample_rate == kSampleRate) return clip;

  const std::int64_t in_rate = clip.sample_rate;
  const std::int64_t in_len = static_cast<std::int64_t>(clip.samples.size());
  const std::int64_t out_len = (2 * in_len * kSampleRate + in_rate) / (2 * in_rate);

  const double step = static_cast<double>(in_rate) / kSampleRate;  // input samples per output
  const double cutoff = std::min(1.0, 1.0 / step);
  const double half_width = kResampleTaps / cutoff;

  AudioClip out;
  out.sample_rate = kSampleRate;
  out.source_path = clip.source_path;
  out.samples.resize(static_cast<std::size_t>(out_len));

  for (std::int64_t n = 0; n < out_len; ++n) {
    // Exact rational position avoids drift over long clips.
    const std::int64_t num = n * in_rate;
    const double pos = static_cast<double>(num / kSampleRate) +
                       static_cast<double>(num % kSampleRate) / kSampleRate;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(pos - half_width)));
    const auto hi = std::min<std::int64_t>(in_len - 1, static_cast<std::int64_t>(std::floor(pos + half_width)));
    double acc = 0.0;
    for (std::int64_t j = lo; j <= hi; ++j) {
      const double d = pos - static_cast<double>(j);
      const double arg = cutoff * d;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_width);
      acc += clip.samples[static_cast<std::size_t>(j)] * cutoff * sinc * window;
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

/// Consecutive non-overlapping 4 s slices from offset 0; the tail is dropped.
inline std::vector<AudioSegment> segment(const AudioClip& clip, Label label) {
  if (clip.sample_rate != kSampleRate) {
    throw UnsupportedRate(clip.source_path + ": segment() needs 16000 Hz input, got " +
                          std::to_string(clip.sample_rate));
  }
  std::vector<AudioSegment> out;
  const std::size_t count = clip.samples.size() / kSegmentSamples;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto first = clip.samples.begin() + static_cast<std::ptrdiff_t>(i * kSegmentSamples);
    out.emplace_back(std::vector<float>(first, first + kSegmentSamples), label, clip.source_path,
                     i * kSegmentSamples);
  }
  return out;
}

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest directory
  Label label;
  std::string speaker;  // empty when the manifest has no speaker column
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path provenance;
};

namespace detail {

/// Splits one CSV line; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  return fields;
}

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Parses a `path,label[,speaker]` CSV. Label errors report the 1-based data
/// row (header excluded).
inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& provenance) {
  Manifest m;
  m.provenance = provenance;
  const auto base = provenance.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw ParseError(provenance.string() + ": empty manifest");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  if (header.size() < 2 || header[0] != "path" || header[1] != "label" ||
      (header.size() == 3 && header[2] != "speaker") || header.size() > 3) {
    throw ParseError(provenance.string() + ": header must be 'path,label' or 'path,label,speaker'");
  }
  const bool with_speaker = header.size() == 3;

  std::set<std::pair<std::string, int>> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError(provenance.string() + ": row " + std::to_string(row) + " has " +
                       std::to_string(fields.size()) + " fields");
    }
    const std::string path = detail::trim(fields[0]);
    const std::string label_text = detail::trim(fields[1]);
    if (path.empty()) throw ParseError(provenance.string() + ": row " + std::to_string(row) + " has empty path");
    const auto label = parse_label(label_text);
    if (!label) throw LabelError(row, "unknown label '" + label_text + "'");
    if (!seen.emplace(path, static_cast<int>(*label)).second) {
      throw ParseError(provenance.string() + ": duplicate entry at row " + std::to_string(row));
    }
    std::filesystem::path p(path);
    if (p.is_relative()) p = base / p;
    m.entries.push_back({p, *label, with_speaker ? detail::trim(fields[2]) : std::string{}});
  }
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path);
}

}  // namespace stutternet
