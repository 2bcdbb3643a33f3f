#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "stutternet/features.hpp"
#include "stutternet/fft.hpp"
#include "stutternet/rng.hpp"

using namespace stutternet;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x[j] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * j % n) / n);
    y[k] = acc;
  }
  return y;
}

std::vector<float> noise(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(scale * rng.normal());
  return x;
}

std::vector<float> tone(double hz, std::size_t n = kSegmentSamples, double amp = 1.0) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>(amp * std::sin(2.0 * kPi * hz * i / 16000.0));
  return x;
}

// Straight-line MFCC reference: naive DFT per frame, filterbank and DCT
// written out from their definitions.
Matrix<double> reference_mfcc(const std::vector<float>& x, int n_mels, int n_mfcc) {
  const int win = 400, hop = 192, nfft = 512, bins = 257;
  const auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> edge(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) edge[i] = hz(mel(8000.0) * i / (n_mels + 1));

  std::vector<Eigen::Index> starts;
  for (std::size_t s = 0; s + win <= x.size(); s += hop) starts.push_back(static_cast<Eigen::Index>(s));
  Matrix<double> out(static_cast<Eigen::Index>(starts.size()), n_mfcc);
  for (std::size_t t = 0; t < starts.size(); ++t) {
    std::vector<std::complex<double>> frame(nfft, 0.0);
    for (int i = 0; i < win; ++i) frame[i] = x[starts[t] + i] * (0.5 - 0.5 * std::cos(2.0 * kPi * i / win));
    const auto spectrum = naive_dft(frame);
    std::vector<double> logmel(static_cast<std::size_t>(n_mels));
    for (int m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k < bins; ++k) {
        const double f = k * 16000.0 / nfft;
        double w = 0.0;
        if (f > edge[m] && f <= edge[m + 1]) w = (f - edge[m]) / (edge[m + 1] - edge[m]);
        if (f > edge[m + 1] && f < edge[m + 2]) w = (edge[m + 2] - f) / (edge[m + 2] - edge[m + 1]);
        e += w * std::norm(spectrum[k]);
      }
      logmel[m] = 10.0 * std::log10(std::max(e, 1e-10));
    }
    for (int k = 0; k < n_mfcc; ++k) {
      double acc = 0.0;
      for (int j = 0; j < n_mels; ++j) acc += logmel[j] * std::cos(kPi * k * (j + 0.5) / n_mels);
      out(static_cast<Eigen::Index>(t), k) = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / n_mels);
    }
  }
  return out;
}

}  // namespace

TEST(Fft, MatchesNaiveDft) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::complex<double>> x(512);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    const auto ref = naive_dft(x);
    auto y = x;
    fft_inplace(y);
    double err = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      err = std::max(err, std::abs(y[k] - ref[k]));
      scale = std::max(scale, std::abs(ref[k]));
    }
    EXPECT_LE(err / scale, 1e-8);
  }
}

TEST(Fft, RejectsNonPowerOfTwo) {
  std::vector<std::complex<double>> x(400);
  EXPECT_THROW(fft_inplace(x), ConfigError);
}

TEST(Frames, ClosedFormMatchesSlidingWindow) {
  EXPECT_EQ(frame_count(64000, 400, 192), 332);
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const auto len = static_cast<std::int64_t>(400 + rng.below(100000));
    std::int64_t naive = 0;
    for (std::int64_t start = 0; start + 400 <= len; start += 192) ++naive;
    ASSERT_EQ(frame_count(len, 400, 192), naive) << "L = " << len;
  }
  EXPECT_EQ(frame_count(399, 400, 192), 0);
}

TEST(Mel, ScaleAndEdges) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(hz_to_mel(700.0), 781.17, 0.01);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  const auto e = mel_band_edges(20, 0.0, 8000.0);
  ASSERT_EQ(e.size(), 22u);
  EXPECT_EQ(e.front(), 0.0);
  EXPECT_EQ(e.back(), 8000.0);
  for (std::size_t i = 1; i < e.size(); ++i) EXPECT_GT(e[i], e[i - 1]);
}

TEST(Mel, FilterbankCoversInteriorBins) {
  for (int n : {10, 20, 30, 40, 50}) {
    const Matrix<double> fb = mel_filterbank(n, 512, 16000, 0.0, 8000.0);
    ASSERT_EQ(fb.rows(), n);
    ASSERT_EQ(fb.cols(), 257);
    EXPECT_LE(fb.maxCoeff(), 1.0);
    EXPECT_GE(fb.minCoeff(), 0.0);
    for (int k = 1; k < 256; ++k) EXPECT_GT(fb.col(k).sum(), 0.0) << "n_mels " << n << " bin " << k;
  }
}

TEST(Mel, TooManyBandsForResolution) { EXPECT_THROW(mel_filterbank(200, 512, 16000, 0.0, 8000.0), ConfigError); }

TEST(Dct, HandValues) {
  const std::vector<double> x{1.0, 0.0};
  const auto y = dct_ortho(x);
  EXPECT_NEAR(y[0], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(y[1], std::cos(kPi / 4.0), 1e-12);

  const std::vector<double> c(20, -3.5);
  const auto yc = dct_ortho(c);
  EXPECT_NEAR(yc[0], -3.5 * std::sqrt(20.0), 1e-12);
  for (std::size_t k = 1; k < yc.size(); ++k) EXPECT_NEAR(yc[k], 0.0, 1e-12);
}

TEST(Dct, Orthonormal) {
  Rng rng(9);
  for (int n : {2, 3, 10, 20, 50}) {
    const Matrix<double> d = dct_ortho_matrix(n);
    EXPECT_LE((d * d.transpose() - Matrix<double>::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-10);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = rng.normal();
    const auto y = dct_ortho(x);
    const Eigen::Map<const Eigen::VectorXd> ym(y.data(), n);
    const Eigen::VectorXd back = d.transpose() * ym;
    for (int i = 0; i < n; ++i) EXPECT_NEAR(back[i], x[i], 1e-10);
  }
}

TEST(Mfcc, ShapeOfFourSecondSegment) {
  const FeatureMatrix f = extract_mfcc(AudioSegment(noise(kSegmentSamples, 1), Label::Fluent), MfccConfig{});
  EXPECT_EQ(f.frames(), 332);
  EXPECT_EQ(f.coeffs(), 20);
  EXPECT_TRUE(f.data.allFinite());
}

TEST(Mfcc, MatchesReferencePipeline) {
  const auto x = noise(8000, 21);
  for (auto [mels, ceps] : {std::pair{20, 20}, std::pair{40, 20}, std::pair{10, 10}}) {
    MfccConfig cfg;
    cfg.n_mels = mels;
    cfg.n_mfcc = ceps;
    const FeatureMatrix f = extract_mfcc(std::span<const float>(x), cfg);
    const Matrix<double> ref = reference_mfcc(x, mels, ceps);
    ASSERT_EQ(f.frames(), ref.rows());
    ASSERT_EQ(f.coeffs(), ref.cols());
    EXPECT_LE((f.data - ref).cwiseAbs().maxCoeff(), 1e-8) << mels << " mels";
  }
}

TEST(Mfcc, SilenceGivesFloorCepstrum) {
  const FeatureMatrix f = extract_mfcc(AudioSegment(std::vector<float>(kSegmentSamples, 0.0f), Label::Block),
                                       MfccConfig{});
  for (int t = 0; t < f.frames(); ++t) {
    EXPECT_NEAR(f.data(t, 0), -100.0 * std::sqrt(20.0), 1e-9);
    for (int c = 1; c < f.coeffs(); ++c) EXPECT_NEAR(f.data(t, c), 0.0, 1e-9);
  }
}

TEST(Mfcc, ToneLandsInNearestBand) {
  const MfccConfig cfg;
  const auto x = tone(1000.0);
  const Matrix<double> e = mel_energies(std::span<const float>(x), cfg);
  const auto edges = mel_band_edges(cfg.n_mels, cfg.fmin, cfg.fmax);
  int nearest = 0;
  for (int m = 1; m < cfg.n_mels; ++m) {
    if (std::abs(edges[m + 1] - 1000.0) < std::abs(edges[nearest + 1] - 1000.0)) nearest = m;
  }
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    Eigen::Index best;
    e.row(t).maxCoeff(&best);
    ASSERT_EQ(best, nearest) << "frame " << t;
  }
}

TEST(Mfcc, ScalingShiftsOnlyC0) {
  const MfccConfig cfg;
  const auto x = noise(kSegmentSamples, 77);
  const FeatureMatrix base = extract_mfcc(std::span<const float>(x), cfg);
  for (double alpha : {0.5, 2.0, 0.125}) {
    std::vector<double> scaled(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) scaled[i] = alpha * x[i];
    const FeatureMatrix f = extract_mfcc(std::span<const double>(scaled), cfg);
    const double shift = std::sqrt(20.0) * 10.0 * std::log10(alpha * alpha);
    EXPECT_LE((f.data.col(0).array() - base.data.col(0).array() - shift).abs().maxCoeff(), 1e-6);
    EXPECT_LE((f.data.rightCols(19) - base.data.rightCols(19)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Mfcc, FiniteForExtremeButFiniteInput) {
  for (double scale : {0.0, 1e-30, 1e-3, 1.0, 1e6}) {
    auto x = noise(4000, 4, scale);
    x[17] = 0.0f;
    EXPECT_TRUE(extract_mfcc(std::span<const float>(x), MfccConfig{}).data.allFinite()) << scale;
  }
}

TEST(Mfcc, Errors) {
  auto x = noise(4000, 4);
  x[100] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(extract_mfcc(std::span<const float>(x), MfccConfig{}), NumericsError);
  const auto short_x = noise(399, 4);
  EXPECT_THROW(extract_mfcc(std::span<const float>(short_x), MfccConfig{}), ShapeError);
  MfccConfig bad;
  bad.n_mfcc = 30;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.fft_size = 256;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.hop = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Mfcc, ConfigJsonStrict) {
  MfccConfig c;
  c.n_mels = 40;
  c.fmin = 20.0;
  EXPECT_EQ(nlohmann::json(c).get<MfccConfig>(), c);
  EXPECT_THROW(nlohmann::json({{"n_mel", 40}}).get<MfccConfig>(), ConfigError);
}

TEST(Cmvn, ZeroMeanUnitVariance) {
  FeatureMatrix f = extract_mfcc(std::span<const float>(noise(20000, 8)), MfccConfig{});
  apply_cmvn(f);
  for (int c = 0; c < f.coeffs(); ++c) {
    EXPECT_NEAR(f.data.col(c).mean(), 0.0, 1e-9);
    EXPECT_NEAR(f.data.col(c).array().square().mean(), 1.0, 1e-6);
  }
}

TEST(FeatureCache, RoundTripAndCorruption) {
  MfccConfig cfg;
  cfg.n_mels = 30;
  cfg.n_mfcc = 13;
  const FeatureMatrix f = extract_mfcc(std::span<const float>(noise(6000, 2)), cfg);
  const std::string bytes = encode_feature_cache(f);
  const auto view = [](const std::string& s) {
    return std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size());
  };
  const FeatureMatrix g = decode_feature_cache(view(bytes));
  EXPECT_EQ(g.config, cfg);
  EXPECT_EQ(g.data, f.data.cast<float>().cast<double>());

  EXPECT_THROW(decode_feature_cache(view(bytes.substr(0, bytes.size() - 1))), ParseError);
  EXPECT_THROW(decode_feature_cache(view(bytes + "x")), ParseError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_feature_cache(view(bad_magic)), ParseError);

  const auto path = std::filesystem::temp_directory_path() / "stutternet_cache_test.mfcc";
  save_feature_cache(path, f);
  EXPECT_EQ(load_feature_cache(path).data, g.data);
  std::filesystem::remove(path);
}
