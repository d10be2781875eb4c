#pragma once

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "lensless/error.hpp"
#include "lensless/fft.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

enum class Domain { scene, measurement };

/// A tensor living on the kernel's 2x-padded grid (the pre-crop intermediate).
template <class T = float>
struct PaddedField {
  Tensor3<T> values;
  Domain domain = Domain::measurement;
};

/// Forward differences along height (dh) and width (dw), circular boundary.
template <class T = float>
struct GradientField {
  Tensor3<T> dh;
  Tensor3<T> dw;

  GradientField() = default;
  explicit GradientField(Shape s) : dh(s), dw(s) {}

  GradientField& operator+=(const GradientField& o) {
    dh += o.dh;
    dw += o.dw;
    return *this;
  }
  void axpy(T s, const GradientField& o) {
    dh.axpy(s, o.dh);
    dw.axpy(s, o.dw);
  }
};

template <class T>
double dot(const GradientField<T>& a, const GradientField<T>& b) {
  return dot(a.dh, b.dh) + dot(a.dw, b.dw);
}

/// Frequency response of a PSF zero-padded onto a 2H x 2W grid.
///
/// The PSF is l1-normalized per channel and circularly shifted so that its
/// intensity centroid (rounded to a pixel) sits at the grid origin. Applying
/// the transfer function is then a linear convolution of a centered sensor
/// window with no wrap-around.
template <class T = float>
struct FrequencyKernel {
  Shape sensor;                 // H x W x C
  Shape padded;                 // 2H x 2W x C
  int crop_top = 0;
  int crop_left = 0;
  int centroid_i = 0;           // rounded centroid in sensor coordinates
  int centroid_j = 0;
  Tensor3<T> psf;               // l1-normalized PSF at sensor shape
  Spectrum<T> transfer;         // half spectrum, channel-innermost
  Spectrum<T> transfer_conj;
  std::vector<T> transfer_abs2; // |transfer|^2, same layout
  std::vector<T> tv_eigen;      // eigenvalues of Psi^T Psi, one per (row, half-col)
  std::shared_ptr<const RealFft2d<T>> fft;

  std::size_t spectrum_size() const { return fft->spectrum_size(); }
};

namespace detail {

template <class T>
void check_psf(const Tensor3<T>& psf) {
  if (psf.height() < 1 || psf.width() < 1 || psf.channels() < 1) throw ShapeError("plan_kernel: empty PSF");
  for (T v : psf.values()) {
    if (!std::isfinite(static_cast<double>(v)) || v < T(0)) {
      throw ConfigError("plan_kernel: PSF values must be finite and non-negative");
    }
  }
}

}  // namespace detail

/// Rounded intensity centroid of a non-negative image (all channels pooled).
template <class T>
std::pair<int, int> intensity_centroid(const Tensor3<T>& img) {
  double total = 0.0, si = 0.0, sj = 0.0;
  for (int i = 0; i < img.height(); ++i)
    for (int j = 0; j < img.width(); ++j)
      for (int k = 0; k < img.channels(); ++k) {
        const double v = img(i, j, k);
        total += v;
        si += v * i;
        sj += v * j;
      }
  if (total <= 0.0) return {img.height() / 2, img.width() / 2};
  return {static_cast<int>(std::lround(si / total)), static_cast<int>(std::lround(sj / total))};
}

/// Plans a kernel with an explicit shift; used when a PSF is re-planned
/// during training and the registration must not jump.
template <class T>
FrequencyKernel<T> plan_kernel_with_shift(const Tensor3<T>& psf, int centroid_i, int centroid_j) {
  detail::check_psf(psf);
  FrequencyKernel<T> k;
  const int h = psf.height(), w = psf.width(), c = psf.channels();
  k.sensor = Shape{h, w, c};
  k.padded = Shape{2 * h, 2 * w, c};
  k.crop_top = h / 2;
  k.crop_left = w / 2;
  k.centroid_i = centroid_i;
  k.centroid_j = centroid_j;
  k.psf = psf;
  for (int ch = 0; ch < c; ++ch) {
    const double s = channel_sum(psf, ch);
    if (!(s > 0.0)) throw ConfigError("plan_kernel: PSF channel " + std::to_string(ch) + " is all zero");
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) k.psf(i, j, ch) = static_cast<T>(psf(i, j, ch) / s);
  }
  const int ph = 2 * h, pw = 2 * w;
  Tensor3<T> shifted(k.padded);
  for (int i = 0; i < h; ++i) {
    const int pi = ((i - centroid_i) % ph + ph) % ph;
    for (int j = 0; j < w; ++j) {
      const int pj = ((j - centroid_j) % pw + pw) % pw;
      for (int ch = 0; ch < c; ++ch) shifted(pi, pj, ch) = k.psf(i, j, ch);
    }
  }
  k.fft = RealFft2d<T>::get(ph, pw, c);
  k.transfer = k.fft->forward(shifted);
  k.transfer_conj.resize(k.transfer.size());
  k.transfer_abs2.resize(k.transfer.size());
  for (std::size_t n = 0; n < k.transfer.size(); ++n) {
    k.transfer_conj[n] = std::conj(k.transfer[n]);
    k.transfer_abs2[n] = std::norm(k.transfer[n]);
  }
  const int hc = k.fft->half_cols();
  k.tv_eigen.resize(static_cast<std::size_t>(ph) * hc);
  for (int a = 0; a < ph; ++a) {
    const double sa = std::sin(std::numbers::pi * a / ph);
    for (int b = 0; b < hc; ++b) {
      const double sb = std::sin(std::numbers::pi * b / pw);
      k.tv_eigen[static_cast<std::size_t>(a) * hc + b] = static_cast<T>(4.0 * sa * sa + 4.0 * sb * sb);
    }
  }
  return k;
}

/// Plans the kernel of a PSF given at sensor shape.
template <class T>
FrequencyKernel<T> plan_kernel(const Tensor3<T>& psf) {
  detail::check_psf(psf);
  const auto [ci, cj] = intensity_centroid(psf);
  return plan_kernel_with_shift(psf, ci, cj);
}

/// Circularly-shifted padded PSF (the spatial kernel the transfer came from).
template <class T>
Tensor3<T> spatial_kernel(const FrequencyKernel<T>& k) {
  return k.fft->inverse(k.transfer);
}

namespace detail {

template <class T>
void require_padded(const FrequencyKernel<T>& k, const Tensor3<T>& v, const char* what) {
  if (!(v.shape() == k.padded)) {
    throw ShapeError(std::string(what) + ": expected padded shape " + k.padded.str() + ", got " + v.shape().str());
  }
}

template <class T>
void require_sensor(const FrequencyKernel<T>& k, const Tensor3<T>& v, const char* what) {
  if (!(v.shape() == k.sensor)) {
    throw ShapeError(std::string(what) + ": expected sensor shape " + k.sensor.str() + ", got " + v.shape().str());
  }
}

}  // namespace detail

/// In-place elementwise product of two half spectra.
template <class T>
void spectral_multiply(Spectrum<T>& s, const Spectrum<T>& t) {
  for (std::size_t n = 0; n < s.size(); ++n) s[n] *= t[n];
}

/// Circular convolution with the PSF on the padded grid.
template <class T>
Tensor3<T> circular_forward(const FrequencyKernel<T>& k, const Tensor3<T>& x) {
  detail::require_padded(k, x, "circular_forward");
  auto s = k.fft->forward(x);
  spectral_multiply(s, k.transfer);
  return k.fft->inverse(s);
}

/// Adjoint of circular_forward (correlation with the PSF).
template <class T>
Tensor3<T> circular_adjoint(const FrequencyKernel<T>& k, const Tensor3<T>& v) {
  detail::require_padded(k, v, "circular_adjoint");
  auto s = k.fft->forward(v);
  spectral_multiply(s, k.transfer_conj);
  return k.fft->inverse(s);
}

/// Zero-fills outside the centered sensor window (C^T).
template <class T>
PaddedField<T> pad_Ct(const FrequencyKernel<T>& k, const Tensor3<T>& y, Domain domain = Domain::measurement) {
  detail::require_sensor(k, y, "pad_Ct");
  PaddedField<T> out{Tensor3<T>(k.padded), domain};
  for (int i = 0; i < y.height(); ++i)
    for (int j = 0; j < y.width(); ++j)
      for (int c = 0; c < y.channels(); ++c) out.values(i + k.crop_top, j + k.crop_left, c) = y(i, j, c);
  return out;
}

/// Takes the centered sensor window (C).
template <class T>
Tensor3<T> crop_C(const FrequencyKernel<T>& k, const Tensor3<T>& v) {
  detail::require_padded(k, v, "crop_C");
  Tensor3<T> out(k.sensor);
  for (int i = 0; i < out.height(); ++i)
    for (int j = 0; j < out.width(); ++j)
      for (int c = 0; c < out.channels(); ++c) out(i, j, c) = v(i + k.crop_top, j + k.crop_left, c);
  return out;
}

template <class T>
Tensor3<T> crop_C(const FrequencyKernel<T>& k, const PaddedField<T>& v) {
  return crop_C(k, v.values);
}

/// P: zero-pad a sensor-sized scene and convolve; the full padded field is returned.
template <class T>
PaddedField<T> forward_P(const FrequencyKernel<T>& k, const Tensor3<T>& x) {
  detail::require_sensor(k, x, "forward_P");
  auto padded = pad_Ct(k, x, Domain::scene);
  return PaddedField<T>{circular_forward(k, padded.values), Domain::measurement};
}

/// P^T: correlate with the PSF and keep the scene window.
template <class T>
Tensor3<T> adjoint_P(const FrequencyKernel<T>& k, const PaddedField<T>& v) {
  return crop_C(k, circular_adjoint(k, v.values));
}

/// Calls f(n, dh, dw) with the circular forward differences at every flat
/// index n, row by row so the inner loops stay contiguous.
template <class T, class F>
void for_each_difference(const Tensor3<T>& x, F&& f) {
  const std::size_t h = x.height(), c = x.channels(), rw = static_cast<std::size_t>(x.width()) * c;
  const T* d = x.data();
  for (std::size_t i = 0; i < h; ++i) {
    const T* row = d + i * rw;
    const T* down = d + ((i + 1) % h) * rw;
    const std::size_t base = i * rw;
    for (std::size_t q = 0; q + c < rw; ++q) f(base + q, down[q] - row[q], row[q + c] - row[q]);
    for (std::size_t q = rw - c; q < rw; ++q) f(base + q, down[q] - row[q], row[q + c - rw] - row[q]);
  }
}

/// Two-tensor variant: f(n, x_dh, x_dw, y_dh, y_dw).
template <class T, class F>
void for_each_difference2(const Tensor3<T>& x, const Tensor3<T>& y, F&& f) {
  x.require_same(y, "for_each_difference2");
  const std::size_t h = x.height(), c = x.channels(), rw = static_cast<std::size_t>(x.width()) * c;
  const T* dx = x.data();
  const T* dy = y.data();
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t base = i * rw, down = ((i + 1) % h) * rw;
    const T *xr = dx + base, *xd = dx + down, *yr = dy + base, *yd = dy + down;
    for (std::size_t q = 0; q + c < rw; ++q)
      f(base + q, xd[q] - xr[q], xr[q + c] - xr[q], yd[q] - yr[q], yr[q + c] - yr[q]);
    for (std::size_t q = rw - c; q < rw; ++q)
      f(base + q, xd[q] - xr[q], xr[q + c - rw] - xr[q], yd[q] - yr[q], yr[q + c - rw] - yr[q]);
  }
}

/// Calls f(n, v) with v = (Psi^T g)[n].
template <class T, class F>
void for_each_divergence(const GradientField<T>& g, F&& f) {
  g.dh.require_same(g.dw, "tv_Psit");
  const std::size_t h = g.dh.height(), c = g.dh.channels(), rw = static_cast<std::size_t>(g.dh.width()) * c;
  const T* gh = g.dh.data();
  const T* gw = g.dw.data();
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t base = i * rw, up = ((i + h - 1) % h) * rw;
    for (std::size_t q = 0; q < c && q < rw; ++q)
      f(base + q, (gh[up + q] - gh[base + q]) + (gw[base + q + rw - c] - gw[base + q]));
    for (std::size_t q = c; q < rw; ++q) f(base + q, (gh[up + q] - gh[base + q]) + (gw[base + q - c] - gw[base + q]));
  }
}

/// Psi: forward differences with circular boundary.
template <class T>
GradientField<T> tv_Psi(const Tensor3<T>& x) {
  GradientField<T> g(x.shape());
  T* dh = g.dh.data();
  T* dw = g.dw.data();
  for_each_difference(x, [&](std::size_t n, T a, T b) {
    dh[n] = a;
    dw[n] = b;
  });
  return g;
}

/// Psi^T: negative circular divergence.
template <class T>
Tensor3<T> tv_Psit(const GradientField<T>& g) {
  Tensor3<T> x(g.dh.shape());
  T* d = x.data();
  for_each_divergence(g, [&](std::size_t n, T v) { d[n] = v; });
  return x;
}

}  // namespace lensless
