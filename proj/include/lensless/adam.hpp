#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "lensless/error.hpp"

namespace lensless {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<double> m, v;
  std::vector<double> lr_scale;  // per-parameter step multiplier; empty means 1 everywhere

  static AdamState init(std::size_t n, const AdamConfig& c = {}) {
    AdamState s;
    s.config = c;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    return s;
  }
};

/// Bias-corrected Adam update, in place.
template <class T>
void adam_step(AdamState& s, std::span<T> params, std::span<const T> grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size() ||
      (!s.lr_scale.empty() && s.lr_scale.size() != params.size())) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, " + std::to_string(s.m.size()) + " moments");
  }
  const auto& c = s.config;
  ++s.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
    const double mh = s.m[i] / bc1, vh = s.v[i] / bc2;
    const double lr = s.lr_scale.empty() ? c.lr : c.lr * s.lr_scale[i];
    params[i] = static_cast<T>(params[i] - lr * mh / (std::sqrt(vh) + c.eps));
  }
}

}  // namespace lensless
