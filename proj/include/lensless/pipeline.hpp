#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lensless/admm.hpp"
#include "lensless/dataset.hpp"
#include "lensless/fista.hpp"
#include "lensless/pnp.hpp"
#include "lensless/processors.hpp"
#include "lensless/tikhonov.hpp"

namespace lensless {

enum class InversionKind { admm100, unrolled, tikhonov, fista, pnp };

inline const char* to_string(InversionKind k) {
  switch (k) {
    case InversionKind::admm100: return "admm100";
    case InversionKind::unrolled: return "unrolled";
    case InversionKind::tikhonov: return "tikhonov";
    case InversionKind::fista: return "fista";
    case InversionKind::pnp: return "pnp";
  }
  return "?";
}

inline InversionKind parse_inversion_kind(const std::string& s) {
  for (auto k : {InversionKind::admm100, InversionKind::unrolled, InversionKind::tikhonov, InversionKind::fista,
                 InversionKind::pnp})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown inversion kind '" + s + "'");
}

struct InversionConfig {
  InversionKind kind = InversionKind::unrolled;
  int n_iter = 5;                  // unrolled layers
  double eps = kTikhonovEps;       // tikhonov initial eps
  int fista_iterations = 100;
  double fista_tau = kAdmmTau;
  int pnp_iterations = kPnpIterations;
  double pnp_rho = kAdmmRhoY;
};

/// Which blocks receive gradients. For tikhonov, `inversion` covers eps and
/// the PSF leaf.
struct Trainable {
  bool pre = false;
  bool inversion = false;
  bool post = false;
  bool any() const { return pre || inversion || post; }
};

/// Values recorded by one pipeline pass.
template <class T>
struct StageOutputs {
  Tensor3<T> pre;   // pre-processor output (normalized measurement units)
  Tensor3<T> inv;   // camera-inversion output in scene units
  Tensor3<T> post;  // final estimate
};

template <class T>
struct PipelineTape {
  T scale = T(1);
  ProcessorTape<T> pre, post;
  UnrolledTape<T> unrolled;
  TikhonovTape<T> tikhonov;
  bool recorded = false;
};

/// pre -> camera inversion -> post. Measurements enter normalized to unit
/// max; the inversion output is multiplied back by that factor.
template <class T = float>
struct Pipeline {
  InversionConfig inversion;
  Tensor3<T> psf;  // as given (the kernel normalizes it)
  FrequencyKernel<T> kernel;
  ProcessorParams<T> pre, post;
  UnrolledParams<T> unrolled;
  T raw_eps = T(0);
  T psf_scale = T(1);  // PSF leaf is exposed as psf / psf_scale so Adam steps are relative
  Trainable trainable;

  static Pipeline make(const Tensor3<T>& psf, const InversionConfig& inv, const ProcessorArch& pre_arch,
                       const ProcessorArch& post_arch, std::uint64_t seed, Trainable trainable = {}) {
    Pipeline p;
    p.inversion = inv;
    p.psf = psf;
    p.kernel = plan_kernel(psf);
    p.pre = init_processor<T>(pre_arch, splitmix64(seed ^ 0x1));
    p.post = init_processor<T>(post_arch, splitmix64(seed ^ 0x2));
    if (inv.kind == InversionKind::unrolled) {
      if (inv.n_iter < 1) throw ConfigError("unrolled inversion needs n_iter >= 1");
      p.unrolled = UnrolledParams<T>::defaults(inv.n_iter);
    }
    if (!(inv.eps > 0.0)) throw ConfigError("tikhonov eps must be positive");
    p.raw_eps = static_cast<T>(inverse_softplus(inv.eps));
    p.psf_scale = max_value(psf) > T(0) ? max_value(psf) : T(1);
    p.trainable = trainable;
    p.check_trainable();
    return p;
  }

  double eps() const { return softplus(raw_eps); }

  void check_trainable() const {
    const bool inv_learnable = inversion.kind == InversionKind::unrolled || inversion.kind == InversionKind::tikhonov;
    if (trainable.inversion && !inv_learnable) {
      throw ConfigError(std::string("inversion '") + to_string(inversion.kind) + "' has no trainable parameters");
    }
    if (trainable.pre && !inv_learnable) {
      throw ConfigError(std::string("a pre-processor cannot be trained through inversion '") +
                        to_string(inversion.kind) + "'");
    }
    if (trainable.pre && pre.arch.kind != ProcessorKind::conv_stack) throw ConfigError("pre-processor is not trainable");
    if (trainable.post && post.arch.kind != ProcessorKind::conv_stack) {
      throw ConfigError("post-processor is not trainable");
    }
    if ((trainable.pre || trainable.inversion) && post.arch.kind == ProcessorKind::tv_smoother) {
      throw ConfigError("tv_smoother is not differentiable; it cannot sit downstream of a trainable block");
    }
  }

  std::size_t inversion_param_count() const {
    if (inversion.kind == InversionKind::unrolled) return unrolled.size();
    if (inversion.kind == InversionKind::tikhonov) return 1 + psf.size();
    return 0;
  }

  /// Length of the trainable parameter vector.
  std::size_t param_count() const {
    std::size_t n = 0;
    if (trainable.pre) n += pre.values.size();
    if (trainable.inversion) n += inversion_param_count();
    if (trainable.post) n += post.values.size();
    return n;
  }

  /// Flat vector of the trainable blocks: [pre][inversion][post].
  std::vector<T> params() const {
    std::vector<T> out;
    out.reserve(param_count());
    if (trainable.pre) out.insert(out.end(), pre.values.begin(), pre.values.end());
    if (trainable.inversion) {
      if (inversion.kind == InversionKind::unrolled) {
        const auto f = unrolled.flat();
        out.insert(out.end(), f.begin(), f.end());
      } else {
        out.push_back(raw_eps);
        for (T v : psf.values()) out.push_back(v / psf_scale);
      }
    }
    if (trainable.post) out.insert(out.end(), post.values.begin(), post.values.end());
    return out;
  }

  /// Inverse of params(). A trainable PSF leaf is projected onto the
  /// non-negative orthant and the kernel re-planned with its shift held.
  void set_params(std::span<const T> v) {
    if (v.size() != param_count()) {
      throw ShapeError("pipeline: expected " + std::to_string(param_count()) + " parameters, got " +
                       std::to_string(v.size()));
    }
    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      auto s = v.subspan(off, n);
      off += n;
      return s;
    };
    if (trainable.pre) {
      const auto s = take(pre.values.size());
      pre.values.assign(s.begin(), s.end());
    }
    if (trainable.inversion) {
      if (inversion.kind == InversionKind::unrolled) {
        unrolled = UnrolledParams<T>::from_flat(take(unrolled.size()));
      } else {
        raw_eps = take(1)[0];
        const auto s = take(psf.size());
        for (std::size_t n = 0; n < psf.size(); ++n) psf[n] = std::max(s[n] * psf_scale, T(0));
        replan();
      }
    }
    if (trainable.post) {
      const auto s = take(post.values.size());
      post.values.assign(s.begin(), s.end());
    }
  }

  void replan() {
    for (int c = 0; c < psf.channels(); ++c)
      if (!(channel_sum(psf, c) > 0.0)) throw NumericalError("PSF leaf collapsed to zero in channel " + std::to_string(c));
    kernel = plan_kernel_with_shift(psf, kernel.centroid_i, kernel.centroid_j);
  }

  /// Parameters a trained instance of this pipeline learns.
  std::size_t learnable_count() const {
    std::size_t n = 0;
    if (pre.arch.kind == ProcessorKind::conv_stack) n += pre.values.size();
    if (post.arch.kind == ProcessorKind::conv_stack) n += post.values.size();
    if (trainable.inversion) n += inversion_param_count();
    return n;
  }

  Tensor3<T> invert(const Tensor3<T>& a, PipelineTape<T>* tape) const {
    switch (inversion.kind) {
      case InversionKind::unrolled:
        if (tape) return unrolled_forward(a, kernel, unrolled, tape->unrolled, false).image;
        return admm_reconstruct<T>(a, kernel, unrolled, std::nullopt, false).image;
      case InversionKind::tikhonov:
        if (tape) return tikhonov_forward(a, kernel, eps(), tape->tikhonov);
        return tikhonov_reconstruct(a, kernel, eps());
      case InversionKind::admm100: return admm100(a, kernel).image;
      case InversionKind::fista: {
        FistaOptions o;
        o.tau = inversion.fista_tau;
        o.iterations = inversion.fista_iterations;
        return fista_reconstruct(a, kernel, o).image;
      }
      case InversionKind::pnp: return pnp_reconstruct(a, kernel, inversion.pnp_rho, inversion.pnp_iterations).image;
    }
    throw ConfigError("unknown inversion kind");
  }

  /// One pass. With a tape, records what backward() needs.
  StageOutputs<T> run(const Tensor3<T>& y, PipelineTape<T>* tape = nullptr) const {
    if (!(y.shape() == kernel.sensor)) {
      throw ShapeError("measurement shape " + y.shape().str() + " does not match PSF shape " + kernel.sensor.str());
    }
    if (!all_finite(y)) throw NumericalError("measurement contains non-finite values");
    const T m = max_value(y);
    const T scale = m > T(0) ? m : T(1);
    if (tape) {
      *tape = PipelineTape<T>{};
      tape->scale = scale;
      tape->recorded = true;
    }
    StageOutputs<T> out;
    out.pre = apply_processor(pre, y * (T(1) / scale), tape ? &tape->pre : nullptr);
    out.inv = invert(out.pre, tape) * scale;
    out.post = apply_processor(post, out.inv, tape ? &tape->post : nullptr);
    return out;
  }

  /// Reverse pass given d loss / d final output and d loss / d inversion
  /// output. Returns the gradient over params() (frozen blocks absent).
  std::vector<T> backward(const PipelineTape<T>& tape, const Tensor3<T>& grad_post, const Tensor3<T>& grad_inv) const {
    if (!tape.recorded) throw Error("pipeline backward called without a recorded forward pass");
    std::vector<T> g(param_count(), T(0));
    const std::size_t n_pre = trainable.pre ? pre.values.size() : 0;
    const std::size_t n_inv = trainable.inversion ? inversion_param_count() : 0;
    std::span<T> g_pre(g.data(), n_pre), g_inv(g.data() + n_pre, n_inv);
    std::span<T> g_post(g.data() + n_pre + n_inv, trainable.post ? post.values.size() : 0);

    const bool upstream = trainable.pre || trainable.inversion;
    Tensor3<T> gx;
    if (trainable.post || upstream) gx = processor_backward(post, tape.post, grad_post, g_post);
    if (!upstream) return g;
    gx += grad_inv;
    gx *= tape.scale;

    Tensor3<T> ga;
    if (inversion.kind == InversionKind::unrolled) {
      auto r = unrolled_backward(kernel, unrolled, tape.unrolled, gx);
      if (trainable.inversion) std::copy(r.params.begin(), r.params.end(), g_inv.begin());
      ga = std::move(r.y);
    } else if (inversion.kind == InversionKind::tikhonov) {
      auto r = tikhonov_backward(kernel, psf, tape.tikhonov, gx);
      if (trainable.inversion) {
        g_inv[0] = static_cast<T>(r.eps * sigmoid(raw_eps));
        for (std::size_t n = 0; n < r.psf.size(); ++n) g_inv[1 + n] = r.psf[n] * psf_scale;
      }
      ga = std::move(r.y);
    } else {
      throw ConfigError(std::string("inversion '") + to_string(inversion.kind) + "' is not differentiable");
    }
    if (trainable.pre) processor_backward(pre, tape.pre, ga, g_pre);
    return g;
  }
};

}  // namespace lensless
