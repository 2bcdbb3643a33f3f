#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "stutternet/error.hpp"

namespace stutternet {

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 decimation-in-time FFT (forward, unscaled).
inline void fft_inplace(std::span<std::complex<double>> a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw ConfigError("FFT size must be a power of two, got " + std::to_string(n));

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const double theta = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles from cos/sin directly rather than by recurrence keeps the
      // error at a few ulps for every stage.
      const std::complex<double> w(std::cos(theta * static_cast<double>(k)),
                                   std::sin(theta * static_cast<double>(k)));
      for (std::size_t start = 0; start < n; start += len) {
        const auto u = a[start + k];
        const auto v = a[start + k + half] * w;
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
}

inline std::vector<std::complex<double>> fft(std::span<const std::complex<double>> x) {
  std::vector<std::complex<double>> out(x.begin(), x.end());
  fft_inplace(out);
  return out;
}

}  // namespace stutternet
