#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include "lensless/tensor.hpp"

namespace lensless {

template <class T>
using Spectrum = AlignedVector<std::complex<T>>;

namespace detail {

template <class T>
struct Fftw;

template <>
struct Fftw<float> {
  using plan = fftwf_plan;
  using complex = fftwf_complex;
  static plan r2c(int rows, int cols, int howmany, float* in, complex* out, unsigned flags) {
    int n[2] = {rows, cols};
    return fftwf_plan_many_dft_r2c(2, n, howmany, in, nullptr, howmany, 1, out, nullptr, howmany, 1, flags);
  }
  static plan c2r(int rows, int cols, int howmany, complex* in, float* out, unsigned flags) {
    int n[2] = {rows, cols};
    return fftwf_plan_many_dft_c2r(2, n, howmany, in, nullptr, howmany, 1, out, nullptr, howmany, 1, flags);
  }
  static void exec_r2c(plan p, float* in, complex* out) { fftwf_execute_dft_r2c(p, in, out); }
  static void exec_c2r(plan p, complex* in, float* out) { fftwf_execute_dft_c2r(p, in, out); }
  static void* alloc(std::size_t bytes) { return fftwf_malloc(bytes); }
  static int alignment_of(float* p) { return fftwf_alignment_of(p); }
  static void free(void* p) { fftwf_free(p); }
};

template <>
struct Fftw<double> {
  using plan = fftw_plan;
  using complex = fftw_complex;
  static plan r2c(int rows, int cols, int howmany, double* in, complex* out, unsigned flags) {
    int n[2] = {rows, cols};
    return fftw_plan_many_dft_r2c(2, n, howmany, in, nullptr, howmany, 1, out, nullptr, howmany, 1, flags);
  }
  static plan c2r(int rows, int cols, int howmany, complex* in, double* out, unsigned flags) {
    int n[2] = {rows, cols};
    return fftw_plan_many_dft_c2r(2, n, howmany, in, nullptr, howmany, 1, out, nullptr, howmany, 1, flags);
  }
  static void exec_r2c(plan p, double* in, complex* out) { fftw_execute_dft_r2c(p, in, out); }
  static void exec_c2r(plan p, complex* in, double* out) { fftw_execute_dft_c2r(p, in, out); }
  static void* alloc(std::size_t bytes) { return fftw_malloc(bytes); }
  static int alignment_of(double* p) { return fftw_alignment_of(p); }
  static void free(void* p) { fftw_free(p); }
};

// FFTW's planner is not re-entrant; execution of an existing plan is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Batched 2-D real FFT over the channels of a channel-innermost H x W x C
/// array. The half spectrum is H x (W/2 + 1) x C, also channel-innermost.
///
/// Plans use FFTW_ESTIMATE so the chosen algorithm (and therefore every
/// rounding decision) is the same on every run.
template <class T>
class RealFft2d {
 public:
  static std::shared_ptr<const RealFft2d> get(int rows, int cols, int channels) {
    static std::mutex cache_mutex;
    static std::map<std::tuple<int, int, int>, std::shared_ptr<const RealFft2d>> cache;
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto& slot = cache[{rows, cols, channels}];
    if (!slot) slot = std::shared_ptr<const RealFft2d>(new RealFft2d(rows, cols, channels));
    return slot;
  }

  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int half_cols() const noexcept { return cols_ / 2 + 1; }
  int channels() const noexcept { return channels_; }
  std::size_t real_size() const noexcept { return static_cast<std::size_t>(rows_) * cols_ * channels_; }
  std::size_t spectrum_size() const noexcept {
    return static_cast<std::size_t>(rows_) * half_cols() * channels_;
  }

  void forward(const T* in, std::complex<T>* out) const {
    // r2c leaves its input intact for out-of-place transforms.
    auto* o = reinterpret_cast<typename Api::complex*>(out);
    T* i = const_cast<T*>(in);
    Api::exec_r2c(aligned(i, o) ? forward_ : forward_unaligned_, i, o);
  }

  Spectrum<T> forward(const Tensor3<T>& in) const {
    check(in);
    Spectrum<T> out(spectrum_size());
    forward(in.data(), out.data());
    return out;
  }

  /// Normalized inverse (includes the 1/(rows*cols) factor).
  void inverse(const std::complex<T>* in, T* out) const {
    Spectrum<T> scratch(in, in + spectrum_size());  // c2r clobbers its input
    inverse_unscaled_destroy(scratch.data(), out);
    const T scale = inverse_scale();
    for (std::size_t n = 0; n < real_size(); ++n) out[n] *= scale;
  }

  /// Unnormalized inverse that clobbers `in`; callers fold inverse_scale()
  /// into the spectrum themselves.
  void inverse_unscaled_destroy(std::complex<T>* in, T* out) const {
    auto* i = reinterpret_cast<typename Api::complex*>(in);
    Api::exec_c2r(aligned(out, i) ? inverse_ : inverse_unaligned_, i, out);
  }

  T inverse_scale() const { return T(1) / static_cast<T>(static_cast<double>(rows_) * cols_); }

  Tensor3<T> inverse(const Spectrum<T>& in) const {
    Tensor3<T> out(rows_, cols_, channels_);
    inverse(in.data(), out.data());
    return out;
  }

  ~RealFft2d() = default;

 private:
  using Api = detail::Fftw<T>;

  RealFft2d(int rows, int cols, int channels) : rows_(rows), cols_(cols), channels_(channels) {
    std::lock_guard<std::mutex> lock(detail::planner_mutex());
    auto* real = static_cast<T*>(Api::alloc(real_size() * sizeof(T)));
    auto* cplx = static_cast<typename Api::complex*>(Api::alloc(spectrum_size() * sizeof(typename Api::complex)));
    forward_ = Api::r2c(rows, cols, channels, real, cplx, FFTW_ESTIMATE);
    inverse_ = Api::c2r(rows, cols, channels, cplx, real, FFTW_ESTIMATE);
    forward_unaligned_ = Api::r2c(rows, cols, channels, real, cplx, FFTW_ESTIMATE | FFTW_UNALIGNED);
    inverse_unaligned_ = Api::c2r(rows, cols, channels, cplx, real, FFTW_ESTIMATE | FFTW_UNALIGNED);
    Api::free(real);
    Api::free(cplx);
  }

  void check(const Tensor3<T>& in) const {
    if (in.height() != rows_ || in.width() != cols_ || in.channels() != channels_) {
      throw ShapeError("fft: expected " + Shape{rows_, cols_, channels_}.str() + ", got " + in.shape().str());
    }
  }

  // Buffers from Tensor3 / Spectrum are 64-byte aligned and take the SIMD
  // plans; anything else falls back to the unaligned pair.
  static bool aligned(T* r, typename Api::complex* c) {
    return Api::alignment_of(r) == 0 && Api::alignment_of(reinterpret_cast<T*>(c)) == 0;
  }

  int rows_, cols_, channels_;
  typename Api::plan forward_{};
  typename Api::plan inverse_{};
  typename Api::plan forward_unaligned_{};
  typename Api::plan inverse_unaligned_{};
};

}  // namespace lensless
