#pragma once

#include <algorithm>
#include <cmath>

#include "lensless/fourier_ops.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// Approximate prox of lambda * ||Psi x||_1 (anisotropic TV), optionally
/// intersected with x >= 0, by the fast gradient projection method on the
/// dual: x = P(b - lambda Psi^T p) with p in [-1, 1].
template <class T>
Tensor3<T> tv_prox(const Tensor3<T>& b, double lambda, int iterations, bool nonneg) {
  if (lambda <= 0.0 || iterations <= 0) return nonneg ? clamp_nonneg(b) : b;
  const T lam = static_cast<T>(lambda);
  const T step = static_cast<T>(1.0 / (8.0 * lambda));  // ||Psi||^2 <= 8
  GradientField<T> p(b.shape()), p_prev(b.shape()), r(b.shape());
  double t = 1.0;
  auto primal = [&](const GradientField<T>& dual) {
    Tensor3<T> x = b;
    x.axpy(-lam, tv_Psit(dual));
    return nonneg ? clamp_nonneg(std::move(x)) : x;
  };
  for (int it = 0; it < iterations; ++it) {
    const auto g = tv_Psi(primal(r));
    for (std::size_t n = 0; n < p.dh.size(); ++n) {
      p.dh[n] = std::clamp(r.dh[n] + step * g.dh[n], T(-1), T(1));
      p.dw[n] = std::clamp(r.dw[n] + step * g.dw[n], T(-1), T(1));
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const T mom = static_cast<T>((t - 1.0) / t_next);
    for (std::size_t n = 0; n < p.dh.size(); ++n) {
      r.dh[n] = p.dh[n] + mom * (p.dh[n] - p_prev.dh[n]);
      r.dw[n] = p.dw[n] + mom * (p.dw[n] - p_prev.dw[n]);
    }
    p_prev = p;
    t = t_next;
  }
  return primal(p);
}

}  // namespace lensless
