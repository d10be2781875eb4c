#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lensless/error.hpp"

namespace lensless {

/// 64-byte aligned storage, so FFT plans can use their SIMD kernels on any
/// tensor or spectrum buffer.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align))); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }
  template <class U>
  bool operator==(const AlignedAllocator<U, Align>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

/// H x W x C image-like array, row-major with the channel index innermost.
///
/// This is the value type for scenes, PSFs, measurements and reconstructions.
/// The scalar type defaults to float; the double instantiation is used by the
/// finite-difference and dense-matrix verification paths.
template <class T = float>
class Tensor3 {
 public:
  using value_type = T;

  Tensor3() = default;
  explicit Tensor3(Shape s, T fill = T(0)) : shape_(s), data_(s.size(), fill) { check_shape(s); }
  Tensor3(int h, int w, int c, T fill = T(0)) : Tensor3(Shape{h, w, c}, fill) {}
  Tensor3(Shape s, const std::vector<T>& values) : shape_(s), data_(values.begin(), values.end()) {
    check_shape(s);
    if (data_.size() != s.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + s.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  int channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::size_t index(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(i) * shape_.width + j) * shape_.channels + k;
  }
  T& operator()(int i, int j, int k) noexcept { return data_[index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const noexcept { return data_[index(i, j, k)]; }
  T& operator[](std::size_t n) noexcept { return data_[n]; }
  const T& operator[](std::size_t n) const noexcept { return data_[n]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor3& operator+=(const Tensor3& o) {
    require_same(o, "+=");
    for (std::size_t n = 0; n < data_.size(); ++n) data_[n] += o.data_[n];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& o) {
    require_same(o, "-=");
    for (std::size_t n = 0; n < data_.size(); ++n) data_[n] -= o.data_[n];
    return *this;
  }
  Tensor3& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(Tensor3 a, T s) { return a *= s; }
  friend Tensor3 operator*(T s, Tensor3 a) { return a *= s; }

  /// this += s * o
  void axpy(T s, const Tensor3& o) {
    require_same(o, "axpy");
    for (std::size_t n = 0; n < data_.size(); ++n) data_[n] += s * o.data_[n];
  }

  template <class U>
  Tensor3<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor3<U>(shape_, std::move(out));
  }

  void require_same(const Tensor3& o, const char* what) const {
    if (!(o.shape_ == shape_)) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    }
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  static void check_shape(const Shape& s) {
    if (s.height < 0 || s.width < 0 || s.channels < 0) throw ShapeError("negative tensor dimension");
  }

  Shape shape_{};
  AlignedVector<T> data_;
};

using Image = Tensor3<float>;

template <class T>
double dot(const Tensor3<T>& a, const Tensor3<T>& b) {
  a.require_same(b, "dot");
  double acc = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) acc += static_cast<double>(a[n]) * static_cast<double>(b[n]);
  return acc;
}

template <class T>
double sum(const Tensor3<T>& a) {
  double acc = 0.0;
  for (T v : a.values()) acc += v;
  return acc;
}

template <class T>
double norm2(const Tensor3<T>& a) {
  return std::sqrt(dot(a, a));
}

template <class T>
double norm1(const Tensor3<T>& a) {
  double acc = 0.0;
  for (T v : a.values()) acc += std::abs(static_cast<double>(v));
  return acc;
}

template <class T>
T max_value(const Tensor3<T>& a) {
  if (a.empty()) return T(0);
  return *std::max_element(a.values().begin(), a.values().end());
}

template <class T>
std::size_t argmax(const Tensor3<T>& a) {
  return static_cast<std::size_t>(std::max_element(a.values().begin(), a.values().end()) -
                                  a.values().begin());
}

template <class T>
bool all_finite(const Tensor3<T>& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](T v) { return std::isfinite(v); });
}

template <class T>
Tensor3<T> clamp_nonneg(Tensor3<T> a) {
  for (auto& v : a.values()) v = std::max(v, T(0));
  return a;
}

/// Sum of a single channel.
template <class T>
double channel_sum(const Tensor3<T>& a, int k) {
  double acc = 0.0;
  for (int i = 0; i < a.height(); ++i)
    for (int j = 0; j < a.width(); ++j) acc += a(i, j, k);
  return acc;
}

/// Repeat a single-channel tensor across `channels` channels.
template <class T>
Tensor3<T> broadcast_channels(const Tensor3<T>& a, int channels) {
  if (a.channels() == channels) return a;
  if (a.channels() != 1) {
    throw ShapeError("cannot broadcast " + a.shape().str() + " to " + std::to_string(channels) + " channels");
  }
  Tensor3<T> out(a.height(), a.width(), channels);
  for (int i = 0; i < a.height(); ++i)
    for (int j = 0; j < a.width(); ++j)
      for (int k = 0; k < channels; ++k) out(i, j, k) = a(i, j, 0);
  return out;
}

}  // namespace lensless
