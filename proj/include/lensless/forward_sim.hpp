#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lensless/error.hpp"
#include "lensless/fourier_ops.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

enum class NoiseKind { none, shot };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double target_snr_db = 20.0;
  std::uint64_t seed = 0;
};

namespace detail {

// Separable circular Gaussian blur of one channel (sigma in pixels).
inline std::vector<double> gaussian_blur(const std::vector<double>& in, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double norm = 0.0;
  for (int t = -radius; t <= radius; ++t) norm += taps[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
  for (auto& v : taps) v /= norm;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += taps[t + radius] * in[i * w + ((j + t) % w + w) % w];
      tmp[i * w + j] = acc;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += taps[t + radius] * tmp[((i + t) % h + h) % h * w + j];
      out[i * w + j] = acc;
    }
  return out;
}

}  // namespace detail

/// Synthetic diffuser-like caustic PSF.
///
/// White noise is smoothed by a Gaussian of the given correlation length,
/// squared, windowed by a soft circular aperture and l1-normalized per
/// channel. Channels share the noise draw but use slightly different
/// correlation lengths, which gives a mild chromatic variation.
template <class T = float>
Tensor3<T> synth_psf(std::uint64_t seed, Shape shape, double correlation_px) {
  if (shape.height < 2 || shape.width < 2 || shape.channels < 1) {
    throw ShapeError("synth_psf: degenerate shape " + shape.str());
  }
  if (!(correlation_px >= 1.0)) throw ConfigError("synth_psf: correlation_px must be >= 1");
  const int h = shape.height, w = shape.width;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(h) * w);
  for (auto& v : noise) v = gauss(rng);

  const double ci = 0.5 * (h - 1), cj = 0.5 * (w - 1);
  const double aperture = 0.35 * std::min(h, w);
  Tensor3<T> psf(shape);
  for (int k = 0; k < shape.channels; ++k) {
    const auto smooth = detail::gaussian_blur(noise, h, w, correlation_px * (1.0 + 0.05 * k));
    double total = 0.0;
    std::vector<double> field(smooth.size());
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double r2 = ((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (aperture * aperture);
        const double v = smooth[i * w + j] * smooth[i * w + j] * std::exp(-r2 * r2);
        field[i * w + j] = v;
        total += v;
      }
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) psf(i, j, k) = static_cast<T>(field[i * w + j] / total);
  }
  return psf;
}

/// Composites `complexity` random rectangles, ellipses and linear gradients
/// over a black background; values stay in [0, 1].
template <class T = float>
Tensor3<T> synth_scene(std::uint64_t seed, Shape shape, int complexity) {
  Tensor3<T> scene(shape);
  if (complexity <= 0) return scene;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int h = shape.height, w = shape.width, c = shape.channels;
  std::vector<double> color(c), color2(c);
  for (int s = 0; s < complexity; ++s) {
    const int kind = static_cast<int>(unit(rng) * 3.0) % 3;
    for (int k = 0; k < c; ++k) {
      color[k] = unit(rng);
      color2[k] = unit(rng);
    }
    const double alpha = 0.5 + 0.5 * unit(rng);
    const double ci = unit(rng) * h, cj = unit(rng) * w;
    const double ri = (0.08 + 0.3 * unit(rng)) * h, rj = (0.08 + 0.3 * unit(rng)) * w;
    const double angle = unit(rng) * 2.0 * 3.14159265358979323846;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double di = (i + 0.5 - ci) / ri, dj = (j + 0.5 - cj) / rj;
        bool inside = false;
        double t = 0.0;
        switch (kind) {
          case 0: inside = std::abs(di) <= 1.0 && std::abs(dj) <= 1.0; break;
          case 1: inside = di * di + dj * dj <= 1.0; break;
          default: {
            // Gradient band across the whole frame along a random direction.
            const double u = ((i + 0.5) / h - 0.5) * ca + ((j + 0.5) / w - 0.5) * sa;
            t = std::clamp(u + 0.5, 0.0, 1.0);
            inside = std::abs(di) <= 1.5 && std::abs(dj) <= 1.5;
          }
        }
        if (!inside) continue;
        for (int k = 0; k < c; ++k) {
          const double src = kind == 2 ? (1.0 - t) * color[k] + t * color2[k] : color[k];
          const double dst = scene(i, j, k);
          scene(i, j, k) = static_cast<T>(std::clamp(alpha * src + (1.0 - alpha) * dst, 0.0, 1.0));
        }
      }
    }
  }
  return scene;
}

/// y = C P x (noise-free measurement). For a non-negative scene the FFT
/// round-off below zero is clipped, so the measurement is non-negative too.
template <class T>
Tensor3<T> simulate(const Tensor3<T>& scene, const FrequencyKernel<T>& kernel) {
  Tensor3<T> y = crop_C(kernel, forward_P(kernel, scene));
  bool nonneg = true;
  for (T v : scene.values()) nonneg = nonneg && v >= T(0);
  if (nonneg)
    for (auto& v : y.values()) v = std::max(v, T(0));
  return y;
}

/// Photon scale gamma that makes sum((g y)^2) / sum(g y) hit the target SNR.
template <class T>
double shot_noise_gain(const Tensor3<T>& y, double target_snr_db) {
  double s1 = 0.0, s2 = 0.0;
  for (T v : y.values()) {
    if (v < T(0)) throw ConfigError("add_shot_noise: measurement has negative values");
    s1 += v;
    s2 += static_cast<double>(v) * v;
  }
  if (!(s2 > 0.0)) throw ConfigError("add_shot_noise: target SNR unattainable for an all-zero measurement");
  return std::pow(10.0, target_snr_db / 10.0) * s1 / s2;
}

/// Draws Poisson(gamma * y) / gamma elementwise; deterministic in spec.seed.
/// Pass gain > 0 to override the SNR-derived photon scale.
template <class T>
Tensor3<T> add_shot_noise(const Tensor3<T>& y, const NoiseSpec& spec, double gain = 0.0) {
  if (spec.kind == NoiseKind::none) return y;
  if (!std::isfinite(spec.target_snr_db)) throw ConfigError("add_shot_noise: non-finite target SNR");
  const double gamma = gain > 0.0 ? gain : shot_noise_gain(y, spec.target_snr_db);
  std::mt19937_64 rng(spec.seed);
  Tensor3<T> out(y.shape());
  for (std::size_t n = 0; n < y.size(); ++n) {
    const double mean = gamma * static_cast<double>(y[n]);
    if (mean <= 0.0) {
      out[n] = T(0);
      continue;
    }
    std::poisson_distribution<long long> draw(mean);
    out[n] = static_cast<T>(static_cast<double>(draw(rng)) / gamma);
  }
  return out;
}

/// Realized SNR in dB: signal power over the power of (noisy - clean).
template <class T>
double empirical_snr_db(const Tensor3<T>& clean, const Tensor3<T>& noisy) {
  double sig = 0.0, err = 0.0;
  for (std::size_t n = 0; n < clean.size(); ++n) {
    sig += static_cast<double>(clean[n]) * clean[n];
    const double d = static_cast<double>(noisy[n]) - clean[n];
    err += d * d;
  }
  return 10.0 * std::log10(sig / err);
}

}  // namespace lensless
