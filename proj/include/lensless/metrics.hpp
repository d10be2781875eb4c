#pragma once

#include <cmath>
#include <vector>

#include "lensless/error.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

template <class T>
double mse(const Tensor3<T>& a, const Tensor3<T>& b) {
  a.require_same(b, "mse");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const double d = static_cast<double>(a[n]) - static_cast<double>(b[n]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / MSE), capped at 100 dB when the images are identical.
template <class T>
double psnr(const Tensor3<T>& a, const Tensor3<T>& b, double peak = 1.0) {
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / m));
}

namespace detail {

// Summed-area table over one channel with a zero guard row/column.
template <class F>
std::vector<double> integral(int h, int w, F&& f) {
  std::vector<double> s(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  for (int i = 0; i < h; ++i) {
    double row = 0.0;
    for (int j = 0; j < w; ++j) {
      row += f(i, j);
      s[static_cast<std::size_t>(i + 1) * (w + 1) + j + 1] = s[static_cast<std::size_t>(i) * (w + 1) + j + 1] + row;
    }
  }
  return s;
}

inline double box(const std::vector<double>& s, int w, int i, int j, int k) {
  const auto at = [&](int r, int c) { return s[static_cast<std::size_t>(r) * (w + 1) + c]; };
  return at(i + k, j + k) - at(i, j + k) - at(i + k, j) + at(i, j);
}

}  // namespace detail

/// Mean SSIM over all fully-contained 7x7 uniform windows, averaged over
/// channels. Dynamic range 1, K1 = 0.01, K2 = 0.03, sample covariances.
template <class T>
double ssim(const Tensor3<T>& a, const Tensor3<T>& b) {
  a.require_same(b, "ssim");
  const int h = a.height(), w = a.width(), k = kSsimWindow;
  if (h < k || w < k) {
    throw ShapeError("ssim: image " + a.shape().str() + " smaller than the " + std::to_string(k) + "x" +
                     std::to_string(k) + " window");
  }
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const double n = static_cast<double>(k * k);
  const double cov_norm = n / (n - 1.0);
  double total = 0.0;
  for (int ch = 0; ch < a.channels(); ++ch) {
    auto av = [&](int i, int j) { return static_cast<double>(a(i, j, ch)); };
    auto bv = [&](int i, int j) { return static_cast<double>(b(i, j, ch)); };
    const auto sa = detail::integral(h, w, av);
    const auto sb = detail::integral(h, w, bv);
    const auto saa = detail::integral(h, w, [&](int i, int j) { return av(i, j) * av(i, j); });
    const auto sbb = detail::integral(h, w, [&](int i, int j) { return bv(i, j) * bv(i, j); });
    const auto sab = detail::integral(h, w, [&](int i, int j) { return av(i, j) * bv(i, j); });
    double acc = 0.0;
    for (int i = 0; i + k <= h; ++i) {
      for (int j = 0; j + k <= w; ++j) {
        const double mu_a = detail::box(sa, w, i, j, k) / n;
        const double mu_b = detail::box(sb, w, i, j, k) / n;
        const double var_a = cov_norm * (detail::box(saa, w, i, j, k) / n - mu_a * mu_a);
        const double var_b = cov_norm * (detail::box(sbb, w, i, j, k) / n - mu_b * mu_b);
        const double cov = cov_norm * (detail::box(sab, w, i, j, k) / n - mu_a * mu_b);
        acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      }
    }
    total += acc / static_cast<double>((h - k + 1) * (w - k + 1));
  }
  return total / a.channels();
}

template <class T>
MetricReport evaluate_metrics(const Tensor3<T>& reference, const Tensor3<T>& estimate) {
  MetricReport r;
  r.mse = mse(reference, estimate);
  r.psnr_db = psnr(reference, estimate, 1.0);
  r.ssim = ssim(reference, estimate);
  return r;
}

}  // namespace lensless
