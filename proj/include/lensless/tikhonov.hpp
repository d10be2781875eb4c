#pragma once

#include <cmath>

#include "lensless/admm.hpp"
#include "lensless/error.hpp"
#include "lensless/fourier_ops.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

// Picked on 20 dB synthetic data: 1e-4 lets the noise through (about 4 dB PSNR),
// 1e-2 to 1e-1 give the best untrained results.
inline constexpr double kTikhonovEps = 1e-2;

/// Regularized least squares on the padded circular grid:
/// (P^T P + eps)^{-1} P^T v, no crop and no clamp.
template <class T>
Tensor3<T> tikhonov_circular(const FrequencyKernel<T>& k, const Tensor3<T>& v, double eps) {
  if (eps < 0.0) throw ConfigError("tikhonov: eps must be non-negative");
  auto s = k.fft->forward(v);
  for (std::size_t n = 0; n < s.size(); ++n) {
    const double d = k.transfer_abs2[n] + eps;
    if (!(d > 0.0)) throw NumericalError("tikhonov: singular system (eps = 0 and a zero of the transfer function)", 0);
    s[n] = k.transfer_conj[n] * s[n] / static_cast<T>(d);
  }
  return k.fft->inverse(s);
}

/// Closed-form Tikhonov reconstruction of a sensor measurement.
template <class T>
Tensor3<T> tikhonov_reconstruct(const Tensor3<T>& y, const FrequencyKernel<T>& k, double eps = kTikhonovEps) {
  return clamp_nonneg(crop_C(k, tikhonov_circular(k, pad_Ct(k, y).values, eps)));
}

template <class T>
struct TikhonovTape {
  Spectrum<T> ypad_hat;
  Spectrum<T> x_hat;   // spectrum of the padded solution
  Tensor3<T> x;        // padded solution before crop and clamp
  double eps = 0.0;
};

template <class T>
Tensor3<T> tikhonov_forward(const Tensor3<T>& y, const FrequencyKernel<T>& k, double eps, TikhonovTape<T>& tape) {
  if (eps < 0.0) throw ConfigError("tikhonov: eps must be non-negative");
  tape.eps = eps;
  tape.ypad_hat = k.fft->forward(pad_Ct(k, y).values);
  tape.x_hat.resize(tape.ypad_hat.size());
  for (std::size_t n = 0; n < tape.x_hat.size(); ++n) {
    const double d = k.transfer_abs2[n] + eps;
    if (!(d > 0.0)) throw NumericalError("tikhonov: singular system (eps = 0 and a zero of the transfer function)", 0);
    tape.x_hat[n] = k.transfer_conj[n] * tape.ypad_hat[n] / static_cast<T>(d);
  }
  tape.x = k.fft->inverse(tape.x_hat);
  return clamp_nonneg(crop_C(k, tape.x));
}

template <class T>
struct TikhonovGradient {
  Tensor3<T> y;
  double eps = 0.0;        // d loss / d eps
  Tensor3<T> psf;          // d loss / d PSF as given to plan_kernel (sensor shape)
};

/// Reverse pass of tikhonov_forward. The PSF gradient is taken through the
/// per-channel l1 normalization with the registration shift held fixed.
template <class T>
TikhonovGradient<T> tikhonov_backward(const FrequencyKernel<T>& k, const Tensor3<T>& raw_psf,
                                      const TikhonovTape<T>& tape, const Tensor3<T>& grad_out) {
  const auto& fft = *k.fft;
  TikhonovGradient<T> g;
  Tensor3<T> gx;
  {
    const Tensor3<T> crop = crop_C(k, tape.x);
    Tensor3<T> masked = grad_out;
    for (std::size_t n = 0; n < masked.size(); ++n)
      if (!(crop[n] > T(0))) masked[n] = T(0);
    gx = pad_Ct(k, masked).values;
  }
  Spectrum<T> r_hat = fft.forward(gx);
  for (std::size_t n = 0; n < r_hat.size(); ++n) r_hat[n] /= static_cast<T>(k.transfer_abs2[n] + tape.eps);
  const Tensor3<T> r = fft.inverse(r_hat);
  g.eps = -dot(r, tape.x);

  Spectrum<T> ar_hat = r_hat;
  spectral_multiply(ar_hat, k.transfer);
  g.y = crop_C(k, fft.inverse(ar_hat));

  // d/dh of <gx, (A^T A + eps)^{-1} A^T ypad> = corr(ypad - A x, r) - corr(A r, x).
  Spectrum<T> h_hat(r_hat.size());
  for (std::size_t n = 0; n < h_hat.size(); ++n) {
    const auto resid = tape.ypad_hat[n] - k.transfer[n] * tape.x_hat[n];
    h_hat[n] = resid * std::conj(r_hat[n]) - ar_hat[n] * std::conj(tape.x_hat[n]);
  }
  const Tensor3<T> gh = fft.inverse(h_hat);

  const int h = k.sensor.height, w = k.sensor.width, c = k.sensor.channels;
  const int ph = k.padded.height, pw = k.padded.width;
  g.psf = Tensor3<T>(k.sensor);
  for (int ch = 0; ch < c; ++ch) {
    const double s = channel_sum(raw_psf, ch);
    double proj = 0.0;
    for (int i = 0; i < h; ++i) {
      const int pi = ((i - k.centroid_i) % ph + ph) % ph;
      for (int j = 0; j < w; ++j) {
        const int pj = ((j - k.centroid_j) % pw + pw) % pw;
        g.psf(i, j, ch) = gh(pi, pj, ch);
        proj += static_cast<double>(gh(pi, pj, ch)) * k.psf(i, j, ch);
      }
    }
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) g.psf(i, j, ch) = static_cast<T>((g.psf(i, j, ch) - proj) / s);
  }
  return g;
}

}  // namespace lensless
