#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <gtest/gtest.h>
#include <unistd.h>
#include <zlib.h>

#include "stutternet/model_store.hpp"
#include "stutternet/training.hpp"

using namespace stutternet;

namespace {

std::span<const unsigned char> bytes_of(const std::string& s) {
  return {reinterpret_cast<const unsigned char*>(s.data()), s.size()};
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void set_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

// Rewrites the trailing checksum with zlib so header edits get past it.
void reseal(std::string& s) {
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size() - 4)));
  set_u32(s, s.size() - 4, crc);
}

struct Fixture {
  ExperimentConfig cfg;
  Model model;
  Matrix<float> x;

  Fixture() : cfg(make_cfg()), model(make_model(cfg)) {
    Rng rng(21);
    model.initialize(rng);
    x.resize(3 * 40, cfg.features.n_mfcc);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
    // Move the running statistics away from their initial values.
    for (int i = 0; i < 3; ++i) model.forward_train(x, 3, rng);
  }

  static ExperimentConfig make_cfg() {
    ExperimentConfig c;
    c.model.hidden = 16;
    c.seed = 99;
    c.features.n_mels = 30;
    return c;
  }
};

class TempDir {
 public:
  TempDir() : path_(std::filesystem::temp_directory_path() / ("stnet_store_" + std::to_string(::getpid()))) {
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace

TEST(ModelStore, RoundTripGivesIdenticalLogits) {
  Fixture f;
  const LoadedModel back = decode_model(bytes_of(encode_model(f.model, f.cfg)));
  EXPECT_EQ(back.model.infer(f.x, 3), f.model.infer(f.x, 3));
  EXPECT_EQ(back.model.embed(f.x, 3), f.model.embed(f.x, 3));
  const auto a = f.model.buffers();
  const auto b = back.model.buffers();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(ModelStore, EmbeddedConfigIsReturned) {
  Fixture f;
  const LoadedModel back = decode_model(bytes_of(encode_model(f.model, f.cfg)));
  EXPECT_EQ(back.config, f.cfg);
  EXPECT_EQ(back.config.features.n_mels, 30);
}

TEST(ModelStore, Layout) {
  Fixture f;
  const std::string s = encode_model(f.model, f.cfg);
  EXPECT_EQ(s.substr(0, 6), "STNET1");
  EXPECT_EQ(static_cast<unsigned char>(s[6]), 1u);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size() - 4)));
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[s.size() - 4 + i])) << (8 * i);
  EXPECT_EQ(stored, crc);
}

TEST(ModelStore, TruncationIsCorrupt) {
  Fixture f;
  const std::string s = encode_model(f.model, f.cfg);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{13}, s.size() / 2, s.size() - 1}) {
    EXPECT_THROW(decode_model(bytes_of(s.substr(0, cut))), CorruptModel) << "cut " << cut;
  }
  // Truncated but resealed: the structure check, not the checksum, catches it.
  std::string shorter = s.substr(0, s.size() - 40);
  reseal(shorter);
  EXPECT_THROW(decode_model(bytes_of(shorter)), CorruptModel);
}

TEST(ModelStore, BitFlipIsCorrupt) {
  Fixture f;
  std::string s = encode_model(f.model, f.cfg);
  s[s.size() / 2] = static_cast<char>(s[s.size() / 2] ^ 0x10);
  EXPECT_THROW(decode_model(bytes_of(s)), CorruptModel);
}

TEST(ModelStore, UnknownVersionIsVersionError) {
  Fixture f;
  std::string s = encode_model(f.model, f.cfg);
  set_u32(s, 6, 2);
  reseal(s);
  EXPECT_THROW(decode_model(bytes_of(s)), VersionError);
}

TEST(ModelStore, MismatchedConfigRejected) {
  Fixture f;
  ExperimentConfig other = f.cfg;
  other.model.hidden = 32;
  EXPECT_THROW(encode_model(f.model, other), UsageError);
}

TEST(ModelStore, SaveLoadSaveIsByteIdentical) {
  Fixture f;
  TempDir dir;
  const auto a = dir.path() / "a.stnet";
  const auto b = dir.path() / "b.stnet";
  save_model(f.model, f.cfg, a);
  const LoadedModel loaded = load_model(a);
  save_model(loaded.model, loaded.config, b);
  EXPECT_EQ(read_all(a), read_all(b));
  EXPECT_FALSE(std::filesystem::exists(a.string() + ".tmp"));
  EXPECT_THROW(load_model(dir.path() / "missing.stnet"), IoError);
}
