#pragma once

// STNET1 model files. Little-endian layout:
//
//   "STNET1"                     6-byte magic
//   u32 version                  kModelFormatVersion
//   u32 n, n bytes               ExperimentConfig as UTF-8 JSON
//   u32 count                    parameter manifest entries, each:
//     u32 n, n bytes name; u32 rows; u32 cols; u64 offset (in floats)
//   u64 n, n float32             parameter blob
//   u32 count                    running-statistics manifest (same entry form)
//   u64 n, n float32             running-statistics blob
//   u32 crc32                    zlib CRC-32 of every preceding byte
//
// Values are float32, so saving a float model and loading it back gives
// bitwise-identical weights and therefore bitwise-identical eval outputs.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "stutternet/audio_io.hpp"
#include "stutternet/config.hpp"
#include "stutternet/error.hpp"
#include "stutternet/nn/stutternet.hpp"

namespace stutternet {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[] = "STNET1";

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t raw;
  std::memcpy(&raw, &v, sizeof raw);
  put_u32(out, raw);
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large models.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

/// Bounds-checked little-endian reader; any overrun is a CorruptModel.
class ModelReader {
 public:
  explicit ModelReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::span<const unsigned char> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CorruptModel("model file truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() { return read_u32(take(4).data()); }
  std::uint64_t u64() {
    const auto* p = take(8).data();
    return static_cast<std::uint64_t>(read_u32(p)) | (static_cast<std::uint64_t>(read_u32(p + 4)) << 32);
  }
  float f32() {
    const std::uint32_t raw = u32();
    float v;
    std::memcpy(&v, &raw, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = u32();
    const auto s = take(n);
    return {reinterpret_cast<const char*>(s.data()), s.size()};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

template <class Tensor>
void write_section(std::string& out, const std::vector<Tensor*>& tensors) {
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto* t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t->name.size()));
    out += t->name;
    put_u32(out, static_cast<std::uint32_t>(t->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t->value.cols()));
    put_u64(out, offset);
    offset += static_cast<std::uint64_t>(t->value.size());
  }
  put_u64(out, offset);
  for (const auto* t : tensors) {
    for (Eigen::Index i = 0; i < t->value.size(); ++i) put_f32(out, t->value.data()[i]);
  }
}

template <class Tensor>
void read_section(ModelReader& in, const std::vector<Tensor*>& tensors, const char* what) {
  const auto count = in.u32();
  if (count != tensors.size()) {
    throw CorruptModel(std::string(what) + " manifest lists " + std::to_string(count) + " tensors, model has " +
                       std::to_string(tensors.size()));
  }
  std::uint64_t expected_offset = 0;
  for (auto* t : tensors) {
    const std::string name = in.str();
    const auto rows = in.u32();
    const auto cols = in.u32();
    const auto offset = in.u64();
    if (name != t->name || rows != t->value.rows() || cols != t->value.cols() || offset != expected_offset) {
      throw CorruptModel(std::string(what) + " manifest entry '" + name + "' does not match model tensor '" + t->name +
                         "'");
    }
    expected_offset += static_cast<std::uint64_t>(rows) * cols;
  }
  if (in.u64() != expected_offset) throw CorruptModel(std::string(what) + " blob size disagrees with manifest");
  for (auto* t : tensors) {
    for (Eigen::Index i = 0; i < t->value.size(); ++i) t->value.data()[i] = in.f32();
  }
}

}  // namespace detail

/// Serialises parameters, running statistics and the full config.
inline std::string encode_model(const nn::StutterNet<float>& model, const ExperimentConfig& config) {
  if (model.input_dim() != config.features.n_mfcc || !(model.config() == config.model)) {
    throw UsageError("encode_model: config does not describe this model");
  }
  std::string out(kModelMagic, 6);
  detail::put_u32(out, kModelFormatVersion);
  const std::string cfg = nlohmann::json(config).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  detail::write_section(out, model.parameters());
  detail::write_section(out, model.buffers());
  detail::put_u32(out, detail::crc32_of({reinterpret_cast<const unsigned char*>(out.data()), out.size()}));
  return out;
}

struct LoadedModel {
  nn::StutterNet<float> model;
  ExperimentConfig config;
};

inline LoadedModel decode_model(std::span<const unsigned char> bytes) {
  if (bytes.size() < 6 + 4 + 4 || std::memcmp(bytes.data(), kModelMagic, 6) != 0) {
    throw CorruptModel("not a STNET1 model file");
  }
  const auto body = bytes.first(bytes.size() - 4);
  if (detail::crc32_of(body) != detail::read_u32(bytes.data() + body.size())) {
    throw CorruptModel("model checksum mismatch");
  }

  detail::ModelReader in(body);
  in.take(6);
  if (const auto version = in.u32(); version != kModelFormatVersion) {
    throw VersionError("model format version " + std::to_string(version) + ", this build reads " +
                       std::to_string(kModelFormatVersion));
  }
  ExperimentConfig config;
  try {
    config = parse_config(in.str());
  } catch (const ConfigError& e) {
    throw CorruptModel(std::string("embedded config invalid: ") + e.what());
  }
  nn::StutterNet<float> model(config.features.n_mfcc, config.model);
  detail::read_section(in, model.parameters(), "parameter");
  detail::read_section(in, model.buffers(), "running-statistics");
  if (!in.done()) throw CorruptModel("trailing bytes in model file");
  return {std::move(model), std::move(config)};
}

/// Written to a temporary file then renamed into place.
inline void save_model(const nn::StutterNet<float>& model, const ExperimentConfig& config,
                       const std::filesystem::path& path) {
  const std::string bytes = encode_model(model, config);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return decode_model(bytes);
}

}  // namespace stutternet
