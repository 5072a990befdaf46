#pragma once

// Naive reference implementations used as test oracles. They share no code
// with the library kernels and accumulate in long double.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "xinc/rng.hpp"
#include "xinc/tensor.hpp"

namespace oracle {

template <typename T>
xinc::BasicTensor<T> random_tensor(xinc::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  xinc::SeededRng rng(seed);
  xinc::BasicTensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
std::vector<long double> matmul(const xinc::BasicTensor<T>& a, const xinc::BasicTensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<long double> out(m * n, 0.0L);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += static_cast<long double>(a[i * k + p]) * b[p * n + j];
  return out;
}

/// Sliding-window cross-correlation with zero "same" padding.
template <typename T>
std::vector<long double> conv2d(const xinc::BasicTensor<T>& x, const xinc::BasicTensor<T>& w,
                                const xinc::BasicTensor<T>* bias) {
  const std::size_t ci_n = x.dim(0), h = x.dim(1), wd = x.dim(2), co_n = w.dim(0);
  const long k = static_cast<long>(w.dim(2)), pad = k / 2;
  std::vector<long double> out(co_n * h * wd, 0.0L);
  for (std::size_t co = 0; co < co_n; ++co)
    for (long y = 0; y < static_cast<long>(h); ++y)
      for (long xx = 0; xx < static_cast<long>(wd); ++xx) {
        long double acc = bias ? static_cast<long double>((*bias)[co]) : 0.0L;
        for (std::size_t ci = 0; ci < ci_n; ++ci)
          for (long dy = 0; dy < k; ++dy)
            for (long dx = 0; dx < k; ++dx) {
              const long sy = y + dy - pad, sx = xx + dx - pad;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) continue;
              acc += static_cast<long double>(x.at(ci, sy, sx)) *
                     w[((co * ci_n + ci) * k + dy) * k + dx];
            }
        out[(co * h + y) * wd + xx] = acc;
      }
  return out;
}

template <typename T>
std::vector<long double> conv2d(const xinc::BasicTensor<T>& x, const xinc::BasicTensor<T>& w) {
  return conv2d<T>(x, w, nullptr);
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, static_cast<double>(std::fabs(static_cast<long double>(a[i]) - static_cast<long double>(b[i]))));
  }
  return m;
}

template <typename A, typename B>
double max_rel_diff(const A& a, const B& b, double floor = 1e-30) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double x = a[i], y = b[i];
    const long double d = std::fabs(x - y);
    const long double s = std::max({std::fabs(x), std::fabs(y), static_cast<long double>(floor)});
    m = std::max(m, static_cast<double>(d / s));
  }
  return m;
}

inline std::filesystem::path data_dir() { return XINC_TEST_DATA; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xinc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
