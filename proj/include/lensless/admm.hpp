#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "lensless/error.hpp"
#include "lensless/fourier_ops.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

// Fixed hyperparameters of the ADMM100 baseline, in units of a measurement
// normalized to unit maximum and an l1-normalized PSF.
inline constexpr double kAdmmRhoX = 1e-4;
inline constexpr double kAdmmRhoY = 1e-4;
inline constexpr double kAdmmRhoZ = 1e-4;
inline constexpr double kAdmmTau = 1e-4;
inline constexpr int kAdmm100Iterations = 100;
inline constexpr int kPnpIterations = 20;

// Floor of the softplus map, so every rho and tau stays strictly positive
// (and representable in float) for arbitrarily negative raw values.
inline constexpr double kSoftplusFloor = 1e-30;

inline double softplus(double r) { return r > 30.0 ? r : std::max(kSoftplusFloor, std::log1p(std::exp(r))); }
inline double inverse_softplus(double v) { return v > 30.0 ? v : std::log(std::expm1(v)); }
inline double sigmoid(double r) { return 1.0 / (1.0 + std::exp(-r)); }

/// Elementwise sign(v) * max(|v| - t, 0).
template <class T>
void soft_threshold(std::span<T> v, T t) {
  if (t < T(0)) throw ConfigError("soft_threshold: negative threshold");
  for (auto& x : v) {
    const T a = std::abs(x) - t;
    x = a > T(0) ? std::copysign(a, x) : T(0);
  }
}

template <class T>
std::vector<T> soft_threshold(std::vector<T> v, T t) {
  soft_threshold(std::span<T>(v), t);
  return v;
}

/// Positive per-iteration hyperparameters of one ADMM iteration.
struct AdmmHyper {
  double rho_x = kAdmmRhoX;  // penalty of the v = P x split (data)
  double rho_y = kAdmmRhoY;  // penalty of the w = x split (non-negativity)
  double rho_z = kAdmmRhoZ;  // penalty of the u = Psi x split (TV)
  double tau = kAdmmTau;     // TV weight
};

/// Unconstrained parameters of an unrolled ADMM; value = softplus(raw).
/// Flat layout: [rho_x (n), rho_y (n), rho_z (n), tau (n)].
template <class T = float>
struct UnrolledParams {
  int n_iter = 0;
  std::vector<T> raw_rho_x, raw_rho_y, raw_rho_z, raw_tau;

  static UnrolledParams from_hyper(int n_iter, const AdmmHyper& h) {
    UnrolledParams p;
    p.n_iter = n_iter;
    p.raw_rho_x.assign(n_iter, static_cast<T>(inverse_softplus(h.rho_x)));
    p.raw_rho_y.assign(n_iter, static_cast<T>(inverse_softplus(h.rho_y)));
    p.raw_rho_z.assign(n_iter, static_cast<T>(inverse_softplus(h.rho_z)));
    p.raw_tau.assign(n_iter, static_cast<T>(inverse_softplus(h.tau)));
    return p;
  }

  /// Warm start: every layer maps to the ADMM100 defaults.
  static UnrolledParams defaults(int n_iter) { return from_hyper(n_iter, AdmmHyper{}); }

  std::size_t size() const { return 4 * static_cast<std::size_t>(n_iter); }

  AdmmHyper hyper(int k) const {
    return AdmmHyper{softplus(raw_rho_x[k]), softplus(raw_rho_y[k]), softplus(raw_rho_z[k]), softplus(raw_tau[k])};
  }

  std::vector<T> flat() const {
    std::vector<T> out;
    out.reserve(size());
    for (const auto* v : {&raw_rho_x, &raw_rho_y, &raw_rho_z, &raw_tau}) out.insert(out.end(), v->begin(), v->end());
    return out;
  }

  static UnrolledParams from_flat(std::span<const T> flat) {
    if (flat.size() % 4 != 0 || flat.empty()) throw ShapeError("unrolled params: length must be a positive multiple of 4");
    UnrolledParams p;
    p.n_iter = static_cast<int>(flat.size() / 4);
    auto slice = [&](int s) { return std::vector<T>(flat.begin() + s * p.n_iter, flat.begin() + (s + 1) * p.n_iter); };
    p.raw_rho_x = slice(0);
    p.raw_rho_y = slice(1);
    p.raw_rho_z = slice(2);
    p.raw_tau = slice(3);
    return p;
  }

  template <class U>
  UnrolledParams<U> cast() const {
    auto flat_t = flat();
    std::vector<U> f(flat_t.begin(), flat_t.end());
    return UnrolledParams<U>::from_flat(f);
  }
};

struct SolverTrace {
  std::vector<double> residual_v;  // ||P x - v||
  std::vector<double> residual_u;  // ||Psi x - u||
  std::vector<double> residual_w;  // ||x - w||
  std::vector<double> data_fidelity;
  std::vector<double> objective;
  std::vector<double> wall_ms;

  std::size_t size() const { return objective.size(); }
};

/// ADMM iterate on the padded grid.
template <class T>
struct AdmmState {
  Tensor3<T> x;             // estimate
  Tensor3<T> px;            // P x (circular)
  Tensor3<T> xi;            // dual of v = P x
  GradientField<T> eta;     // dual of u = Psi x
  Tensor3<T> mu;            // dual of w = x
};

/// Optional replacement of the non-negativity prox (plug-and-play).
template <class T>
using Denoiser = std::function<Tensor3<T>(const Tensor3<T>&)>;

namespace detail {

template <class T>
Tensor3<T> window_mask(const FrequencyKernel<T>& k) {
  Tensor3<T> ones(k.sensor, T(1));
  return pad_Ct(k, ones).values;
}

// Intermediate split variables of one iteration; shared by the forward and
// reverse passes so both see bit-identical values.
template <class T>
struct AdmmSplits {
  GradientField<T> s_u, u;
  Tensor3<T> v, s_w, w;
};

// The splits the reverse pass reads back. |s_u| > tau / rho_z exactly where
// u != 0, and s_w > 0 exactly where w > 0, so s_u and s_w are not kept.
template <class T>
struct SplitRecord {
  GradientField<T> u;
  Tensor3<T> v, w;
};

template <class T>
inline T shrink(T v, T t) {
  const T m = std::abs(v) - t;
  return m > T(0) ? std::copysign(m, v) : T(0);
}

template <class T>
AdmmSplits<T> admm_splits(const FrequencyKernel<T>& k, const AdmmState<T>& s, const Tensor3<T>& ypad,
                          const Tensor3<T>& mask, const AdmmHyper& h, const Denoiser<T>* denoiser) {
  const T a = static_cast<T>(h.rho_x), b = static_cast<T>(h.rho_z), c = static_cast<T>(h.rho_y);
  const T theta = static_cast<T>(h.tau / h.rho_z);
  const T ib = T(1) / b, ic = T(1) / c;
  const Shape ps = s.x.shape();
  AdmmSplits<T> sp{GradientField<T>(ps), GradientField<T>(ps), Tensor3<T>(ps), Tensor3<T>(ps), Tensor3<T>(ps)};
  T *suh = sp.s_u.dh.data(), *suw = sp.s_u.dw.data(), *uh = sp.u.dh.data(), *uw = sp.u.dw.data();
  const T *eh = s.eta.dh.data(), *ew = s.eta.dw.data();
  for_each_difference(s.x, [&](std::size_t n, T gh, T gw) {
    const T vh = gh + ib * eh[n], vw = gw + ib * ew[n];
    suh[n] = vh;
    suw[n] = vw;
    uh[n] = shrink(vh, theta);
    uw[n] = shrink(vw, theta);
  });
  const std::size_t size = s.x.size();
  const T *x = s.x.data(), *px = s.px.data(), *xi = s.xi.data(), *mu = s.mu.data();
  const T *m = mask.data(), *y = ypad.data();
  T *v = sp.v.data(), *sw = sp.s_w.data(), *w = sp.w.data();
  for (std::size_t n = 0; n < size; ++n) {
    v[n] = (m[n] * y[n] + a * px[n] + xi[n]) / (m[n] + a);
    sw[n] = x[n] + ic * mu[n];
    w[n] = sw[n] > T(0) ? sw[n] : T(0);
  }
  if (denoiser && *denoiser) {
    // The denoiser sees the sensor window only; the margin keeps the plain projection.
    const Tensor3<T> d = (*denoiser)(crop_C(k, sp.w));
    if (!(d.shape() == k.sensor)) throw ShapeError("plug-and-play denoiser changed the image shape");
    for (int i = 0; i < d.height(); ++i)
      for (int j = 0; j < d.width(); ++j)
        for (int ch = 0; ch < d.channels(); ++ch) sp.w(i + k.crop_top, j + k.crop_left, ch) = d(i, j, ch);
  }
  return sp;
}

// Diagonal of the x-update system in the Fourier domain.
template <class T>
std::vector<T> xupdate_denominator(const FrequencyKernel<T>& k, const AdmmHyper& h) {
  const std::size_t n = k.spectrum_size();
  const std::size_t c = k.padded.channels;
  std::vector<T> d(n);
  for (std::size_t m = 0, e = 0; m < n; m += c, ++e) {
    const double tv = h.rho_z * k.tv_eigen[e] + h.rho_y;
    for (std::size_t ch = 0; ch < c; ++ch) d[m + ch] = static_cast<T>(h.rho_x * k.transfer_abs2[m + ch] + tv);
  }
  return d;
}

}  // namespace detail

/// Matched-filter start x0 = P^T C^T y scaled to unit maximum; duals zero.
/// `matched` may pass a precomputed P^T C^T y.
template <class T>
AdmmState<T> admm_init(const FrequencyKernel<T>& k, const Tensor3<T>& ypad, const Tensor3<T>* matched = nullptr) {
  AdmmState<T> s;
  s.x = matched ? *matched : circular_adjoint(k, ypad);
  const T m = max_value(s.x);
  if (m > T(0)) s.x *= T(1) / m;
  else s.x.fill(T(0));
  s.px = circular_forward(k, s.x);
  s.xi = Tensor3<T>(k.padded);
  s.eta = GradientField<T>(k.padded);
  s.mu = Tensor3<T>(k.padded);
  return s;
}

/// One ADMM iteration; updates `s` in place and optionally appends diagnostics.
template <class T>
void admm_iteration(const FrequencyKernel<T>& k, const Tensor3<T>& ypad, const Tensor3<T>& mask, const AdmmHyper& h,
                    AdmmState<T>& s, int iteration, SolverTrace* trace, const Denoiser<T>* denoiser = nullptr,
                    detail::SplitRecord<T>* record = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const T a = static_cast<T>(h.rho_x), b = static_cast<T>(h.rho_z), c = static_cast<T>(h.rho_y);
  auto sp = detail::admm_splits(k, s, ypad, mask, h, denoiser);
  const std::size_t size = s.x.size();

  // rhs = P^T (a v - xi) + [Psi^T (b u - eta) + c w - mu]; s_u is reused
  // as scratch for b u - eta.
  Tensor3<T> lhs(s.x.shape()), rest(s.x.shape());
  {
    T *l = lhs.data(), *gh = sp.s_u.dh.data(), *gw = sp.s_u.dw.data();
    const T *v = sp.v.data(), *xi = s.xi.data(), *uh = sp.u.dh.data(), *uw = sp.u.dw.data();
    const T *eh = s.eta.dh.data(), *ew = s.eta.dw.data();
    for (std::size_t n = 0; n < size; ++n) {
      l[n] = a * v[n] - xi[n];
      gh[n] = b * uh[n] - eh[n];
      gw[n] = b * uw[n] - ew[n];
    }
    T* r = rest.data();
    const T *w = sp.w.data(), *mu = s.mu.data();
    for_each_divergence(sp.s_u, [&](std::size_t n, T d) { r[n] = d + c * w[n] - mu[n]; });
  }

  const auto& fft = *k.fft;
  Spectrum<T> fa = fft.forward(lhs);
  Spectrum<T> fb = fft.forward(rest);
  {
    const auto denom = detail::xupdate_denominator(k, h);
    const T scale = fft.inverse_scale();
    for (std::size_t n = 0; n < fa.size(); ++n) {
      fa[n] = (k.transfer_conj[n] * fa[n] + fb[n]) * (scale / denom[n]);
      fb[n] = fa[n] * k.transfer[n];
    }
  }
  fft.inverse_unscaled_destroy(fa.data(), s.x.data());
  fft.inverse_unscaled_destroy(fb.data(), s.px.data());

  // Scaled dual ascent on all three splits.
  double rv = 0.0, ru = 0.0, rw = 0.0;
  bool finite = true;
  {
    const T *x = s.x.data(), *px = s.px.data(), *v = sp.v.data(), *w = sp.w.data();
    const T *uh = sp.u.dh.data(), *uw = sp.u.dw.data();
    T *xi = s.xi.data(), *mu = s.mu.data(), *eh = s.eta.dh.data(), *ew = s.eta.dw.data();
    // Residual norms only feed the trace; without one the x check below suffices.
    auto ascend = [&](auto with_norms) {
      for_each_difference(s.x, [&](std::size_t n, T gh, T gw) {
        const T dv = px[n] - v[n];
        const T dw = x[n] - w[n];
        const T dh = gh - uh[n];
        const T dd = gw - uw[n];
        xi[n] += a * dv;
        mu[n] += c * dw;
        eh[n] += b * dh;
        ew[n] += b * dd;
        if constexpr (decltype(with_norms)::value) {
          rv += static_cast<double>(dv) * dv;
          rw += static_cast<double>(dw) * dw;
          ru += static_cast<double>(dh) * dh + static_cast<double>(dd) * dd;
        }
      });
    };
    if (trace) ascend(std::true_type{});
    else ascend(std::false_type{});
    finite = std::isfinite(rv) && std::isfinite(rw) && std::isfinite(ru);
  }
  if (!finite || !all_finite(s.x)) throw NumericalError("ADMM produced a non-finite estimate", iteration);
  if (trace) {
    double data = 0.0;
    for (std::size_t n = 0; n < size; ++n) {
      const double r = mask[n] * (static_cast<double>(ypad[n]) - s.px[n]);
      data += r * r;
    }
    data *= 0.5;
    const auto psi_x = tv_Psi(s.x);
    const double tv = h.tau * (norm1(psi_x.dh) + norm1(psi_x.dw));
    trace->residual_v.push_back(std::sqrt(rv));
    trace->residual_u.push_back(std::sqrt(ru));
    trace->residual_w.push_back(std::sqrt(rw));
    trace->data_fidelity.push_back(data);
    trace->objective.push_back(data + tv);
    trace->wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  if (record) *record = detail::SplitRecord<T>{std::move(sp.u), std::move(sp.v), std::move(sp.w)};
}

template <class T>
Tensor3<T> admm_output(const FrequencyKernel<T>& k, const AdmmState<T>& s) {
  return crop_C(k, clamp_nonneg(s.x));
}

template <class T>
struct Reconstruction {
  Tensor3<T> image;
  SolverTrace trace;
};

/// Runs ADMM with per-iteration hyperparameters.
template <class T>
Reconstruction<T> admm_reconstruct(const Tensor3<T>& y, const FrequencyKernel<T>& k, const std::vector<AdmmHyper>& hyper,
                                   const std::optional<AdmmState<T>>& init = std::nullopt,
                                   const Denoiser<T>* denoiser = nullptr, bool with_trace = true) {
  const Tensor3<T> ypad = pad_Ct(k, y).values;
  const Tensor3<T> mask = detail::window_mask(k);
  AdmmState<T> s = init ? *init : admm_init(k, ypad);
  Reconstruction<T> out;
  for (std::size_t it = 0; it < hyper.size(); ++it) {
    admm_iteration(k, ypad, mask, hyper[it], s, static_cast<int>(it) + 1, with_trace ? &out.trace : nullptr, denoiser);
  }
  out.image = admm_output(k, s);
  return out;
}

template <class T>
Reconstruction<T> admm_reconstruct(const Tensor3<T>& y, const FrequencyKernel<T>& k, const UnrolledParams<T>& p,
                                   const std::optional<AdmmState<T>>& init = std::nullopt, bool with_trace = true) {
  std::vector<AdmmHyper> hyper;
  for (int it = 0; it < p.n_iter; ++it) hyper.push_back(p.hyper(it));
  return admm_reconstruct<T>(y, k, hyper, init, nullptr, with_trace);
}

/// TV weight of ADMM100: kAdmmTau scaled by the largest finite difference of
/// the matched-filter start.
template <class T>
double admm100_tau(const Tensor3<T>& y, const FrequencyKernel<T>& k) {
  const auto g = tv_Psi(admm_init(k, pad_Ct(k, y).values).x);
  double m = 0.0;
  for (std::size_t n = 0; n < g.dh.size(); ++n) m = std::max({m, std::abs(double(g.dh[n])), std::abs(double(g.dw[n]))});
  return kAdmmTau * m;
}

/// ADMM100 baseline: 100 iterations with the fixed default hyperparameters.
template <class T>
Reconstruction<T> admm100(const Tensor3<T>& y, const FrequencyKernel<T>& k) {
  AdmmHyper h;
  h.tau = admm100_tau(y, k);
  return admm_reconstruct(y, k, std::vector<AdmmHyper>(kAdmm100Iterations, h));
}

/// Plug-and-play ADMM: the non-negativity prox is followed by `denoiser`
/// (applied to the sensor window); the TV weight is zero. `rho` is the
/// penalty of the denoised split.
template <class T>
Reconstruction<T> pnp_reconstruct(const Tensor3<T>& y, const FrequencyKernel<T>& k, const Denoiser<T>& denoiser,
                                  double rho = kAdmmRhoY, int n_iter = kPnpIterations) {
  AdmmHyper h;
  h.rho_y = rho;
  h.tau = 0.0;
  return admm_reconstruct<T>(y, k, std::vector<AdmmHyper>(n_iter, h), std::nullopt, &denoiser);
}

/// Everything the reverse pass needs: the state entering every iteration.
template <class T>
struct UnrolledTape {
  std::vector<AdmmState<T>> states;  // n_iter + 1 entries
  std::vector<detail::SplitRecord<T>> splits;  // n_iter entries
  Tensor3<T> ypad;
  Tensor3<T> mask;
  Tensor3<T> matched;                // P^T C^T y before scaling
  T matched_max = T(0);
  std::vector<AdmmHyper> hyper;

  std::size_t bytes() const {
    std::size_t n = 0;
    for (const auto& s : states) n += (s.x.size() + s.px.size() + s.xi.size() + 2 * s.eta.dh.size() + s.mu.size());
    for (const auto& r : splits) n += 2 * r.u.dh.size() + r.v.size() + r.w.size();
    return n * sizeof(T);
  }
};

/// Same computation as admm_reconstruct, recording every iterate. The
/// per-iteration trace is optional since training does not read it.
template <class T>
Reconstruction<T> unrolled_forward(const Tensor3<T>& y, const FrequencyKernel<T>& k, const UnrolledParams<T>& p,
                                   UnrolledTape<T>& tape, bool with_trace = true) {
  tape = UnrolledTape<T>{};
  tape.ypad = pad_Ct(k, y).values;
  tape.mask = detail::window_mask(k);
  tape.matched = circular_adjoint(k, tape.ypad);
  tape.matched_max = max_value(tape.matched);
  AdmmState<T> s = admm_init(k, tape.ypad, &tape.matched);
  Reconstruction<T> out;
  tape.states.reserve(p.n_iter + 1);
  tape.splits.resize(p.n_iter);
  for (int it = 0; it < p.n_iter; ++it) {
    tape.states.push_back(s);
    tape.hyper.push_back(p.hyper(it));
    admm_iteration<T>(k, tape.ypad, tape.mask, tape.hyper.back(), s, it + 1, with_trace ? &out.trace : nullptr, nullptr,
                      &tape.splits[it]);
  }
  out.image = admm_output(k, s);
  tape.states.push_back(std::move(s));
  return out;
}

template <class T>
struct UnrolledGradient {
  Tensor3<T> y;             // d loss / d measurement
  std::vector<T> params;    // d loss / d raw params, flat layout
};

/// Reverse pass of unrolled_forward given d loss / d output.
template <class T>
UnrolledGradient<T> unrolled_backward(const FrequencyKernel<T>& k, const UnrolledParams<T>& p,
                                      const UnrolledTape<T>& tape, const Tensor3<T>& grad_out) {
  if (tape.states.size() != static_cast<std::size_t>(p.n_iter) + 1 || tape.splits.size() + 1 != tape.states.size()) {
    throw Error("unrolled_backward called without a matching recorded forward pass");
  }
  const auto& fft = *k.fft;
  const Shape ps = k.padded;
  const int n_iter = p.n_iter;
  UnrolledGradient<T> out;
  out.params.assign(p.size(), T(0));

  // Output: crop(max(0, x_K)).
  Tensor3<T> gx = pad_Ct(k, grad_out).values;
  {
    const auto& xk = tape.states.back().x;
    for (std::size_t n = 0; n < gx.size(); ++n)
      if (!(xk[n] > T(0))) gx[n] = T(0);
  }
  Tensor3<T> gpx(ps), gxi(ps), gmu(ps);
  GradientField<T> geta(ps);
  Tensor3<T> gypad(ps);

  const T scale = fft.inverse_scale();
  GradientField<T> gsu(ps);
  Spectrum<T> rs, fp;

  for (int it = n_iter - 1; it >= 0; --it) {
    const auto& s = tape.states[it];
    const auto& nx = tape.states[it + 1];
    const AdmmHyper& h = tape.hyper[it];
    const T a = static_cast<T>(h.rho_x), b = static_cast<T>(h.rho_z), c = static_cast<T>(h.rho_y);
    const T t = static_cast<T>(h.tau);
    const auto& sp = tape.splits[it];
    double ga = 0.0, gb = 0.0, gc = 0.0, gt = 0.0;

    // Dual updates xi += a (P x - v), eta += b (Psi x - u), mu += c (x - w).
    // Their rho gradients are folded into the loop below.
    {
      const T *gxi_d = gxi.data(), *gmu_d = gmu.data();
      T *gpx_d = gpx.data(), *gx_d = gx.data();
      for (std::size_t n = 0; n < gx.size(); ++n) {
        gpx_d[n] += a * gxi_d[n];
        gx_d[n] += c * gmu_d[n];
      }
      for_each_divergence(geta, [&](std::size_t n, T d) { gx_d[n] += b * d; });
    }

    // x' = K^{-1} r and P x'.
    rs = fft.forward(gx);
    fp = fft.forward(gpx);
    {
      const auto denom = detail::xupdate_denominator(k, h);
      for (std::size_t n = 0; n < rs.size(); ++n) {
        rs[n] = (rs[n] + k.transfer_conj[n] * fp[n]) * (scale / denom[n]);
        fp[n] = rs[n] * k.transfer[n];
      }
    }
    Tensor3<T> gr(ps), pgr(ps);
    fft.inverse_unscaled_destroy(rs.data(), gr.data());
    fft.inverse_unscaled_destroy(fp.data(), pgr.data());

    // r = P^T (a v - xi) + Psi^T (b u - eta) + c w - mu, then back through
    // w = max(0, x + mu / c), v = (m y + a P x + xi) / (m + a) and
    // u = S(Psi x + eta / b, tau / b). Every array is updated in place.
    double gtheta = 0.0;
    {
      const T *v = sp.v.data(), *w = sp.w.data(), *uh = sp.u.dh.data(), *uw = sp.u.dw.data();
      const T *nx_x = nx.x.data(), *nx_px = nx.px.data(), *pgr_d = pgr.data(), *gr_d = gr.data();
      const T *mask = tape.mask.data(), *s_mu = s.mu.data(), *s_px = s.px.data();
      const T *seh = s.eta.dh.data(), *sew = s.eta.dw.data();
      T *gxi_d = gxi.data(), *gmu_d = gmu.data(), *geh = geta.dh.data(), *gew = geta.dw.data();
      T *gx_d = gx.data(), *gpx_d = gpx.data(), *gy = gypad.data();
      T *gsh = gsu.dh.data(), *gsw = gsu.dw.data();
      const T ib = T(1) / b, ic = T(1) / c;
      const double ic2 = 1.0 / (static_cast<double>(c) * c), ib2 = 1.0 / (static_cast<double>(b) * b);
      for_each_difference2(gr, nx.x, [&](std::size_t n, T rh, T rw, T xh, T xw) {
        const T pg = pgr_d[n], g = gr_d[n];
        // The x-update path and the dual updates share these residuals.
        ga += (static_cast<double>(gxi_d[n]) - pg) * (nx_px[n] - v[n]);
        gb += (static_cast<double>(geh[n]) - rh) * (xh - uh[n]) + (static_cast<double>(gew[n]) - rw) * (xw - uw[n]);
        gc += (static_cast<double>(gmu_d[n]) - g) * (nx_x[n] - w[n]);
        const T gv = -a * gxi_d[n] + a * pg;
        const T gw = -c * gmu_d[n] + c * g;
        const T guh = -b * geh[n] + b * rh;
        const T guw = -b * gew[n] + b * rw;
        // w prox
        const T gwp = w[n] > T(0) ? gw : T(0);
        gx_d[n] = gwp;
        gmu_d[n] = gmu_d[n] - g + gwp * ic;
        gc -= static_cast<double>(gwp) * s_mu[n] * ic2;
        // v average
        const T gvd = gv / (mask[n] + a);
        gy[n] += mask[n] * gvd;
        gpx_d[n] = a * gvd;
        gxi_d[n] = gxi_d[n] - pg + gvd;
        ga += static_cast<double>(gvd) * (s_px[n] - v[n]);
        // shrinkage
        const T sh = uh[n] != T(0) ? guh : T(0);
        const T sv = uw[n] != T(0) ? guw : T(0);
        gtheta -= static_cast<double>((uh[n] > T(0) ? sh : -sh) + (uw[n] > T(0) ? sv : -sv));
        gsh[n] = sh;
        gsw[n] = sv;
        geh[n] = geh[n] - rh + sh * ib;
        gew[n] = gew[n] - rw + sv * ib;
        gb -= (static_cast<double>(sh) * seh[n] + static_cast<double>(sv) * sew[n]) * ib2;
      });
      for_each_divergence(gsu, [&](std::size_t n, T d) { gx_d[n] += d; });
    }
    gt += gtheta / b;
    gb -= gtheta * t / (static_cast<double>(b) * b);

    // Chain through softplus.
    out.params[it] += static_cast<T>(ga * sigmoid(p.raw_rho_x[it]));
    out.params[n_iter + it] += static_cast<T>(gc * sigmoid(p.raw_rho_y[it]));
    out.params[2 * n_iter + it] += static_cast<T>(gb * sigmoid(p.raw_rho_z[it]));
    out.params[3 * n_iter + it] += static_cast<T>(gt * sigmoid(p.raw_tau[it]));
  }

  // x0 = g / max(g), g = P^T ypad, and P x0.
  gx += circular_adjoint(k, gpx);
  if (tape.matched_max > T(0)) {
    const T m = tape.matched_max;
    Tensor3<T> gg = gx * (T(1) / m);
    const std::size_t am = argmax(tape.matched);
    gg[am] -= static_cast<T>(dot(gx, tape.matched) / (static_cast<double>(m) * m));
    gypad += circular_forward(k, gg);
  }
  out.y = crop_C(k, gypad);
  return out;
}

}  // namespace lensless
