#pragma once

#include "lensless/admm.hpp"
#include "lensless/processors.hpp"

namespace lensless {

/// Wraps a processor as a plug-and-play denoiser.
template <class T>
Denoiser<T> processor_denoiser(ProcessorParams<T> p) {
  check_params(p);
  return [p = std::move(p)](const Tensor3<T>& x) { return apply_processor(p, x); };
}

/// Plug-and-play ADMM with the default classical denoiser (3x3 median).
template <class T>
Reconstruction<T> pnp_reconstruct(const Tensor3<T>& y, const FrequencyKernel<T>& k, double rho = kAdmmRhoY,
                                  int n_iter = kPnpIterations) {
  const auto d = processor_denoiser(ProcessorParams<T>{fixed_arch(ProcessorKind::median_smoother), {}});
  return pnp_reconstruct(y, k, d, rho, n_iter);
}

}  // namespace lensless
