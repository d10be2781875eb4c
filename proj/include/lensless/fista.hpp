#pragma once

#include <chrono>
#include <cmath>

#include "lensless/admm.hpp"
#include "lensless/error.hpp"
#include "lensless/fourier_ops.hpp"
#include "lensless/tensor.hpp"
#include "lensless/tv_prox.hpp"

namespace lensless {

inline constexpr int kFistaProxIterations = 10;
inline constexpr int kPowerIterations = 30;

/// Largest eigenvalue of P^T C^T C P on the padded grid, by power iteration.
template <class T>
double lipschitz_constant(const FrequencyKernel<T>& k, int iterations = kPowerIterations) {
  const Tensor3<T> mask = detail::window_mask(k);
  Tensor3<T> v(k.padded, T(1));
  v *= static_cast<T>(1.0 / norm2(v));
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Tensor3<T> av = circular_forward(k, v);
    for (std::size_t n = 0; n < av.size(); ++n) av[n] *= mask[n];
    av = circular_adjoint(k, av);
    lambda = dot(v, av);
    const double nrm = norm2(av);
    if (!(nrm > 0.0)) return 0.0;
    v = av * static_cast<T>(1.0 / nrm);
  }
  return lambda;
}

struct FistaOptions {
  double tau = kAdmmTau;
  int iterations = 100;
  int prox_iterations = kFistaProxIterations;
  double step = 0.0;  // 0: 1 / Lipschitz constant
};

/// Accelerated proximal gradient for 1/2 ||y - C P x||^2 + tau ||Psi x||_1,
/// x >= 0, with the monotone safeguard: an iterate is only accepted if it
/// does not increase the objective.
template <class T>
Reconstruction<T> fista_reconstruct(const Tensor3<T>& y, const FrequencyKernel<T>& k, const FistaOptions& opt = {}) {
  const Tensor3<T> ypad = pad_Ct(k, y).values;
  const Tensor3<T> mask = detail::window_mask(k);
  double step = opt.step;
  if (step <= 0.0) {
    const double lip = lipschitz_constant(k);
    if (!(lip > 0.0)) throw NumericalError("FISTA: zero Lipschitz constant", 0);
    step = 1.0 / lip;
  }
  auto objective = [&](const Tensor3<T>& x, double* data_out) {
    const Tensor3<T> px = circular_forward(k, x);
    double data = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double r = mask[n] * (static_cast<double>(px[n]) - ypad[n]);
      data += r * r;
    }
    data *= 0.5;
    const auto g = tv_Psi(x);
    if (data_out) *data_out = data;
    return data + opt.tau * (norm1(g.dh) + norm1(g.dw));
  };

  Tensor3<T> x = admm_init(k, ypad).x;
  double fx = objective(x, nullptr);
  Tensor3<T> z = x;
  double t = 1.0;
  Reconstruction<T> out;
  for (int it = 1; it <= opt.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor3<T> r = circular_forward(k, z);
    for (std::size_t n = 0; n < r.size(); ++n) r[n] = mask[n] * r[n] - ypad[n];
    Tensor3<T> grad = circular_adjoint(k, r);
    Tensor3<T> cand = z;
    cand.axpy(static_cast<T>(-step), grad);
    cand = tv_prox(cand, step * opt.tau, opt.prox_iterations, true);
    double data = 0.0;
    const double fc = objective(cand, &data);
    if (!std::isfinite(fc) || !all_finite(cand)) throw NumericalError("FISTA produced a non-finite estimate", it);
    const std::size_t hist = out.trace.objective.size();
    if (hist >= 5 && fc > 10.0 * out.trace.objective[hist - 5]) {
      throw NumericalError("FISTA diverged (objective grew tenfold over five iterations)", it);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    Tensor3<T> x_prev = x;
    if (fc <= fx) {
      x = cand;
      fx = fc;
    }
    z = x;
    z.axpy(static_cast<T>(t / t_next), cand - x);
    z.axpy(static_cast<T>((t - 1.0) / t_next), x - x_prev);
    t = t_next;
    out.trace.objective.push_back(fx);
    out.trace.data_fidelity.push_back(data);
    out.trace.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  out.image = crop_C(k, clamp_nonneg(x));
  return out;
}

}  // namespace lensless
