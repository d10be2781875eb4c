#pragma once

#include <functional>

#include "lensless/error.hpp"
#include "lensless/metrics.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

/// Final-output loss is mse_weight * MSE + perceptual_weight * perceptual;
/// alpha weights the same loss on the camera-inversion output.
struct LossWeights {
  double mse_weight = 1.0;
  double perceptual_weight = 0.0;
  double alpha = 0.0;
};

inline void validate(const LossWeights& w) {
  if (!(w.alpha >= 0.0)) throw ConfigError("loss: alpha must be >= 0");
  if (!(w.mse_weight >= 0.0) || !(w.perceptual_weight >= 0.0)) throw ConfigError("loss: weights must be >= 0");
}

/// Pluggable differentiable image-to-scalar term. Adds its gradient with
/// respect to the estimate into `grad` when given. None ships by default.
template <class T>
using PerceptualTerm = std::function<double(const Tensor3<T>& truth, const Tensor3<T>& estimate, Tensor3<T>* grad)>;

/// Loss on one estimate; `grad` (optional) receives d loss / d x_hat.
template <class T>
double loss_total(const Tensor3<T>& x, const Tensor3<T>& x_hat, const LossWeights& w = {}, Tensor3<T>* grad = nullptr,
                  const PerceptualTerm<T>* perceptual = nullptr) {
  validate(w);
  if (!(x.shape() == x_hat.shape())) throw ShapeError("loss: shapes " + x.shape().str() + " and " + x_hat.shape().str());
  if (w.perceptual_weight > 0.0 && !(perceptual && *perceptual)) {
    throw ConfigError("loss: perceptual_weight > 0 but no perceptual term is configured");
  }
  double value = w.mse_weight * mse(x, x_hat);
  if (grad) {
    *grad = Tensor3<T>(x.shape());
    const double s = 2.0 * w.mse_weight / static_cast<double>(std::max<std::size_t>(x.size(), 1));
    for (std::size_t n = 0; n < x.size(); ++n) (*grad)[n] = static_cast<T>(s * (static_cast<double>(x_hat[n]) - x[n]));
  }
  if (w.perceptual_weight > 0.0) {
    Tensor3<T> pg(x.shape());
    value += w.perceptual_weight * (*perceptual)(x, x_hat, grad ? &pg : nullptr);
    if (grad) grad->axpy(static_cast<T>(w.perceptual_weight), pg);
  }
  return value;
}

/// L(x, x_hat) + alpha L(x, x_hat_inv).
template <class T>
double loss_with_aux(const Tensor3<T>& x, const Tensor3<T>& x_hat, const Tensor3<T>& x_hat_inv, const LossWeights& w,
                     Tensor3<T>* grad_hat = nullptr, Tensor3<T>* grad_inv = nullptr,
                     const PerceptualTerm<T>* perceptual = nullptr) {
  double value = loss_total(x, x_hat, w, grad_hat, perceptual);
  if (!(x.shape() == x_hat_inv.shape())) throw ShapeError("loss: inversion output has shape " + x_hat_inv.shape().str());
  if (w.alpha > 0.0) {
    value += w.alpha * loss_total(x, x_hat_inv, w, grad_inv, perceptual);
    if (grad_inv) *grad_inv *= static_cast<T>(w.alpha);
  } else if (grad_inv) {
    *grad_inv = Tensor3<T>(x.shape());
  }
  return value;
}

}  // namespace lensless
