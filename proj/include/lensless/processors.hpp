#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lensless/error.hpp"
#include "lensless/tensor.hpp"
#include "lensless/tv_prox.hpp"

namespace lensless {

enum class ProcessorKind { identity, conv_stack, median_smoother, tv_smoother };

inline const char* to_string(ProcessorKind k) {
  switch (k) {
    case ProcessorKind::identity: return "identity";
    case ProcessorKind::conv_stack: return "conv_stack";
    case ProcessorKind::median_smoother: return "median_smoother";
    case ProcessorKind::tv_smoother: return "tv_smoother";
  }
  return "?";
}

inline ProcessorKind parse_processor_kind(const std::string& s) {
  if (s == "identity" || s == "none") return ProcessorKind::identity;
  if (s == "conv_stack") return ProcessorKind::conv_stack;
  if (s == "median_smoother") return ProcessorKind::median_smoother;
  if (s == "tv_smoother") return ProcessorKind::tv_smoother;
  throw ConfigError("unknown processor kind '" + s + "'");
}

inline constexpr double kLeakySlope = 0.1;
inline constexpr double kTvSmootherWeight = 0.05;
inline constexpr int kTvSmootherIterations = 20;

struct ProcessorArch {
  ProcessorKind kind = ProcessorKind::identity;
  std::vector<int> widths;  // channel counts; widths.size() - 1 conv layers
  int kernel_size = 3;
  double slope = kLeakySlope;

  int layers() const { return widths.empty() ? 0 : static_cast<int>(widths.size()) - 1; }

  friend bool operator==(const ProcessorArch&, const ProcessorArch&) = default;
};

/// Architecture for the parameter-free kinds.
inline ProcessorArch fixed_arch(ProcessorKind k) {
  ProcessorArch a;
  a.kind = k;
  return a;
}

/// Desk-scale default: conv_stack 3 -> 8 -> 8 -> 3 with 3x3 kernels.
inline ProcessorArch default_conv_arch(int channels = 3) {
  return ProcessorArch{ProcessorKind::conv_stack, {channels, 8, 8, channels}, 3, kLeakySlope};
}

inline void validate(const ProcessorArch& a) {
  if (a.kind != ProcessorKind::conv_stack) return;
  if (a.widths.size() < 2) throw ConfigError("conv_stack needs at least two widths");
  if (a.widths.front() != a.widths.back()) {
    throw ConfigError("conv_stack widths must start and end at the image channel count");
  }
  if (a.kernel_size < 1 || a.kernel_size % 2 == 0) throw ConfigError("conv_stack kernel_size must be odd");
  for (int w : a.widths)
    if (w < 1) throw ConfigError("conv_stack widths must be positive");
}

/// sum over layers of k^2 * c_in * c_out + c_out; zero for non-learned kinds.
inline std::size_t param_count(const ProcessorArch& a) {
  validate(a);
  if (a.kind != ProcessorKind::conv_stack) return 0;
  std::size_t n = 0;
  const std::size_t k2 = static_cast<std::size_t>(a.kernel_size) * a.kernel_size;
  for (int l = 0; l < a.layers(); ++l) {
    n += k2 * a.widths[l] * a.widths[l + 1] + a.widths[l + 1];
  }
  return n;
}

/// Flat parameters. Layout per layer: weights indexed [c_out][c_in][ky][kx]
/// (kx fastest), then c_out biases; layers follow each other.
template <class T = float>
struct ProcessorParams {
  ProcessorArch arch;
  std::vector<T> values;

  template <class U>
  ProcessorParams<U> cast() const {
    return ProcessorParams<U>{arch, std::vector<U>(values.begin(), values.end())};
  }
};

/// Offset of layer `l` inside the flat vector.
inline std::size_t layer_offset(const ProcessorArch& a, int l) {
  std::size_t off = 0;
  const std::size_t k2 = static_cast<std::size_t>(a.kernel_size) * a.kernel_size;
  for (int m = 0; m < l; ++m) off += k2 * a.widths[m] * a.widths[m + 1] + a.widths[m + 1];
  return off;
}

/// Hidden layers ~ U(-b, b) with b = sqrt(3 / fan_in) (variance 1 / fan_in);
/// the final layer is zero so the residual processor starts as the identity.
template <class T = float>
ProcessorParams<T> init_processor(const ProcessorArch& a, std::uint64_t seed) {
  ProcessorParams<T> p{a, std::vector<T>(param_count(a), T(0))};
  if (a.kind != ProcessorKind::conv_stack) return p;
  std::mt19937_64 rng(seed);
  const int k2 = a.kernel_size * a.kernel_size;
  for (int l = 0; l + 1 < a.layers(); ++l) {
    const int fan_in = k2 * a.widths[l];
    const double bound = std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t off = layer_offset(a, l);
    const std::size_t nw = static_cast<std::size_t>(k2) * a.widths[l] * a.widths[l + 1];
    for (std::size_t n = 0; n < nw; ++n) p.values[off + n] = static_cast<T>(dist(rng));
  }
  return p;
}

namespace detail {

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

template <class T>
Tensor3<T> reflect_pad(const Tensor3<T>& x, int r) {
  const int h = x.height(), w = x.width(), c = x.channels();
  Tensor3<T> out(h + 2 * r, w + 2 * r, c);
  for (int i = 0; i < h + 2 * r; ++i) {
    const int si = reflect_index(i - r, h);
    for (int j = 0; j < w + 2 * r; ++j) {
      const int sj = reflect_index(j - r, w);
      std::copy_n(&x(si, sj, 0), c, &out(i, j, 0));
    }
  }
  return out;
}

// Adjoint of reflect_pad: folds the padded gradient back onto the image.
template <class T>
Tensor3<T> reflect_pad_adjoint(const Tensor3<T>& g, int r) {
  const int h = g.height() - 2 * r, w = g.width() - 2 * r, c = g.channels();
  Tensor3<T> out(h, w, c);
  for (int i = 0; i < g.height(); ++i) {
    const int si = reflect_index(i - r, h);
    for (int j = 0; j < g.width(); ++j) {
      const int sj = reflect_index(j - r, w);
      for (int k = 0; k < c; ++k) out(si, sj, k) += g(i, j, k);
    }
  }
  return out;
}

// Repacks [co][ci][ky][kx] weights into [ky][kx][ci][co] for the inner loops.
template <class T>
std::vector<T> repack_weights(const T* w, int cin, int cout, int k) {
  std::vector<T> out(static_cast<std::size_t>(k) * k * cin * cout);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          out[((static_cast<std::size_t>(ky) * k + kx) * cin + ci) * cout + co] =
              w[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
  return out;
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Patch matrix of a padded input: one row per output pixel, columns ordered
// [ky][kx][ci] to match repack_weights.
template <class T>
RowMatrix<T> im2col(const Tensor3<T>& xp, int h, int w, int k) {
  const int cin = xp.channels();
  const std::size_t span = static_cast<std::size_t>(k) * cin;
  RowMatrix<T> cols(static_cast<Eigen::Index>(h) * w, static_cast<Eigen::Index>(k) * span);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      T* row = cols.data() + (static_cast<std::size_t>(i) * w + j) * cols.cols();
      for (int ky = 0; ky < k; ++ky) std::copy_n(&xp(i + ky, j, 0), span, row + ky * span);
    }
  return cols;
}

template <class T>
Tensor3<T> conv_layer(const Tensor3<T>& x, const T* weights, const T* bias, int cout, int k) {
  const int r = k / 2, h = x.height(), w = x.width(), cin = x.channels();
  const RowMatrix<T> cols = im2col(reflect_pad(x, r), h, w, k);
  const auto wk = repack_weights(weights, cin, cout, k);
  Eigen::Map<const RowMatrix<T>> wm(wk.data(), static_cast<Eigen::Index>(k) * k * cin, cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias, cout);
  Tensor3<T> out(h, w, cout);
  Eigen::Map<RowMatrix<T>> om(out.data(), static_cast<Eigen::Index>(h) * w, cout);
  om.noalias() = cols * wm;
  om.rowwise() += b;
  return out;
}

// Accumulates weight/bias gradients into gw/gb (original layout) and returns
// the gradient with respect to the layer input.
template <class T>
Tensor3<T> conv_layer_backward(const Tensor3<T>& x, const T* weights, const Tensor3<T>& grad_out, T* gw, T* gb,
                               int k) {
  const int r = k / 2, h = x.height(), w = x.width(), cin = x.channels(), cout = grad_out.channels();
  const Tensor3<T> xp = reflect_pad(x, r);
  const RowMatrix<T> cols = im2col(xp, h, w, k);
  const auto wk = repack_weights(weights, cin, cout, k);
  const Eigen::Index kk = static_cast<Eigen::Index>(k) * k * cin;
  Eigen::Map<const RowMatrix<T>> wm(wk.data(), kk, cout);
  Eigen::Map<const RowMatrix<T>> g(grad_out.data(), static_cast<Eigen::Index>(h) * w, cout);

  const RowMatrix<T> gwk = cols.transpose() * g;
  const Eigen::Matrix<T, 1, Eigen::Dynamic> gbias = g.colwise().sum();
  for (int co = 0; co < cout; ++co) gb[co] += gbias(co);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          gw[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx] += gwk((ky * k + kx) * cin + ci, co);

  const RowMatrix<T> gcols = g * wm.transpose();
  Tensor3<T> gxp(xp.shape());
  const std::size_t span = static_cast<std::size_t>(k) * cin;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const T* row = gcols.data() + (static_cast<std::size_t>(i) * w + j) * kk;
      for (int ky = 0; ky < k; ++ky) {
        T* dst = &gxp(i + ky, j, 0);
        const T* src = row + ky * span;
        for (std::size_t q = 0; q < span; ++q) dst[q] += src[q];
      }
    }
  return reflect_pad_adjoint(gxp, r);
}

// 3x3 median with reflect boundary; `source` (optional) receives, for every
// output element, the flat index of the input element that was selected.
template <class T>
Tensor3<T> median3x3(const Tensor3<T>& x, std::vector<std::uint32_t>* source) {
  const int h = x.height(), w = x.width(), c = x.channels();
  Tensor3<T> out(x.shape());
  if (source) source->assign(x.size(), 0);
  std::array<std::pair<T, std::uint32_t>, 9> win;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) {
        int n = 0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const std::size_t idx = x.index(reflect_index(i + di, h), reflect_index(j + dj, w), k);
            win[n++] = {x[idx], static_cast<std::uint32_t>(idx)};
          }
        std::nth_element(win.begin(), win.begin() + 4, win.end());
        out(i, j, k) = win[4].first;
        if (source) (*source)[out.index(i, j, k)] = win[4].second;
      }
  return out;
}

}  // namespace detail

/// Intermediates recorded by a training-mode forward pass.
template <class T>
struct ProcessorTape {
  std::vector<Tensor3<T>> layer_inputs;  // conv_stack: input of each layer
  std::vector<std::uint32_t> median_source;
  bool recorded = false;
};

template <class T>
void check_params(const ProcessorParams<T>& p) {
  if (p.values.size() != param_count(p.arch)) {
    throw ShapeError("processor has " + std::to_string(p.values.size()) + " parameters, arch needs " +
                     std::to_string(param_count(p.arch)));
  }
}

/// Applies a processor. conv_stack computes x + stack(x) with leaky
/// activations between layers and reflect padding inside each layer.
template <class T>
Tensor3<T> apply_processor(const ProcessorParams<T>& p, const Tensor3<T>& x, ProcessorTape<T>* tape = nullptr) {
  check_params(p);
  const auto& a = p.arch;
  if (tape) {
    *tape = ProcessorTape<T>{};
    tape->recorded = true;
  }
  switch (a.kind) {
    case ProcessorKind::identity: return x;
    case ProcessorKind::median_smoother: return detail::median3x3(x, tape ? &tape->median_source : nullptr);
    case ProcessorKind::tv_smoother: return tv_prox(x, kTvSmootherWeight, kTvSmootherIterations, false);
    case ProcessorKind::conv_stack: break;
  }
  if (x.channels() != a.widths.front()) {
    throw ShapeError("processor expects " + std::to_string(a.widths.front()) + " channels, got " +
                     std::to_string(x.channels()));
  }
  const int k = a.kernel_size, k2 = k * k;
  const T slope = static_cast<T>(a.slope);
  Tensor3<T> h = x;
  for (int l = 0; l < a.layers(); ++l) {
    const int cin = a.widths[l], cout = a.widths[l + 1];
    const T* wts = p.values.data() + layer_offset(a, l);
    const T* bias = wts + static_cast<std::size_t>(k2) * cin * cout;
    if (tape) tape->layer_inputs.push_back(h);
    h = detail::conv_layer(h, wts, bias, cout, k);
    if (l + 1 < a.layers()) {
      for (auto& v : h.values()) v = v > T(0) ? v : slope * v;
    }
  }
  h += x;
  return h;
}

/// Reverse pass: adds parameter gradients into `grad_params` (may be empty
/// when parameter gradients are not wanted) and returns d loss / d input.
template <class T>
Tensor3<T> processor_backward(const ProcessorParams<T>& p, const ProcessorTape<T>& tape, const Tensor3<T>& grad_out,
                              std::span<T> grad_params) {
  const auto& a = p.arch;
  if (!tape.recorded) throw Error("processor_backward called without a recorded forward pass");
  switch (a.kind) {
    case ProcessorKind::identity: return grad_out;
    case ProcessorKind::median_smoother: {
      Tensor3<T> g(grad_out.shape());
      for (std::size_t n = 0; n < grad_out.size(); ++n) g[tape.median_source[n]] += grad_out[n];
      return g;
    }
    case ProcessorKind::tv_smoother:
      throw ConfigError("tv_smoother is not differentiable; it cannot sit downstream of a trainable block");
    case ProcessorKind::conv_stack: break;
  }
  std::vector<T> scratch;
  if (grad_params.empty()) {
    scratch.assign(p.values.size(), T(0));
    grad_params = scratch;
  }
  if (grad_params.size() != p.values.size()) throw ShapeError("processor_backward: gradient length mismatch");
  const int k = a.kernel_size, k2 = k * k;
  const T slope = static_cast<T>(a.slope);
  Tensor3<T> g = grad_out;  // gradient at the output of the last conv
  for (int l = a.layers() - 1; l >= 0; --l) {
    const int cin = a.widths[l], cout = a.widths[l + 1];
    const std::size_t off = layer_offset(a, l);
    const T* wts = p.values.data() + off;
    T* gw = grad_params.data() + off;
    T* gb = gw + static_cast<std::size_t>(k2) * cin * cout;
    g = detail::conv_layer_backward(tape.layer_inputs[l], wts, g, gw, gb, k);
    if (l > 0) {
      // layer_inputs[l] is the activation output of layer l-1.
      const auto& act = tape.layer_inputs[l];
      for (std::size_t n = 0; n < g.size(); ++n)
        if (!(act[n] > T(0))) g[n] *= slope;
    }
  }
  g += grad_out;  // residual skip
  return g;
}

}  // namespace lensless
