#include <cmath>
#include <numbers>

#include "lensless/fourier_ops.hpp"
#include "test_support.hpp"

using namespace lensless;
using namespace lensless::testing;

namespace {

// Circular shift by (di, dj): out(i, j) = x(i + di, j + dj).
Tensor3<double> roll(const Tensor3<double>& x, int di, int dj) {
  Tensor3<double> out(x.shape());
  const int h = x.height(), w = x.width();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < x.channels(); ++k) out(i, j, k) = x((i + di + h) % h, (j + dj + w) % w, k);
  return out;
}

// Adjoint mismatch |<Ax, y> - <x, A^T y>| scaled by ||Ax|| ||y||, which stays
// meaningful when the inner products themselves nearly cancel.
double adjoint_mismatch(double lhs, double rhs, double norm_ax, double norm_y) {
  return std::abs(lhs - rhs) / std::max(norm_ax * norm_y, 1e-300);
}

}  // namespace

TEST(PlanKernel, DeltaPsfIsIdentityOnCrop) {
  const Shape s{8, 8, 3};
  const auto k = plan_kernel(delta_psf(s));
  const Image x = random_tensor(s, 1);
  EXPECT_LE(max_abs_diff(crop_C(k, forward_P(k, x)), x), 1e-6);
  EXPECT_LE(max_abs_diff(adjoint_P(k, PaddedField<float>{pad_Ct(k, x).values}), x), 1e-6);
}

TEST(PlanKernel, UniformSquareHasUnitDc) {
  const Shape s{16, 16, 3};
  Image psf(s);
  for (int i = 4; i < 9; ++i)
    for (int j = 6; j < 11; ++j)
      for (int c = 0; c < 3; ++c) psf(i, j, c) = 2.5f + c;
  const auto k = plan_kernel(psf);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(k.transfer[c].real(), 1.0, 1e-6);
    EXPECT_NEAR(k.transfer[c].imag(), 0.0, 1e-6);
    EXPECT_NEAR(channel_sum(k.psf, c), 1.0, 1e-6);
  }
}

TEST(PlanKernel, RejectsBadPsf) {
  Image psf(4, 4, 2, 1.0f);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) psf(i, j, 1) = 0.0f;
  EXPECT_THROW(plan_kernel(psf), ConfigError);
  Image neg(4, 4, 1, 1.0f);
  neg[3] = -1.0f;
  EXPECT_THROW(plan_kernel(neg), ConfigError);
}

TEST(PlanKernel, SpatialKernelIsRealShiftedPsf) {
  const Shape s{6, 10, 2};
  const Image psf = random_tensor(s, 4);
  const auto k = plan_kernel(psf);
  const Image spatial = spatial_kernel(k);
  for (int i = 0; i < s.height; ++i)
    for (int j = 0; j < s.width; ++j)
      for (int c = 0; c < s.channels; ++c) {
        const int pi = ((i - k.centroid_i) % 12 + 12) % 12, pj = ((j - k.centroid_j) % 20 + 20) % 20;
        EXPECT_NEAR(spatial(pi, pj, c), k.psf(i, j, c), 1e-6);
      }
}

TEST(ForwardP, MatchesDirectConvolution) {
  for (const Shape s : {Shape{8, 8, 1}, Shape{8, 8, 3}, Shape{7, 5, 2}}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Image psf = random_tensor(s, seed);
      const Image x = random_tensor(s, seed + 10, -1.0, 1.0);
      const auto k = plan_kernel(psf);
      const Tensor3<double> want = dense_forward(psf, x);
      const Image got = forward_P(k, x).values;
      EXPECT_LE(max_abs_diff(got, want) / max_abs_diff(want, Tensor3<double>(want.shape())), 1e-5) << s.str();
    }
  }
}

TEST(ForwardP, LinearityAndZero) {
  const Shape s{16, 16, 3};
  const auto k = plan_kernel(random_tensor(s, 2));
  EXPECT_EQ(max_abs_diff(forward_P(k, Image(s)).values, Image(k.padded)), 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Image x1 = random_tensor(s, seed, -1, 1), x2 = random_tensor(s, seed + 99, -1, 1);
    const float a = 0.3f + seed, b = -1.7f;
    Image comb = x1 * a;
    comb.axpy(b, x2);
    Image want = forward_P(k, x1).values * a;
    want.axpy(b, forward_P(k, x2).values);
    EXPECT_LE(rel_err(forward_P(k, comb).values, want), 1e-5);
  }
}

TEST(ForwardP, ConservesIntensity) {
  const Shape s{32, 24, 3};
  const auto k = plan_kernel(random_tensor(s, 11));
  const Image x = random_tensor(s, 12);
  const auto v = forward_P(k, x).values;
  for (int c = 0; c < 3; ++c) EXPECT_LE(rel_diff(channel_sum(v, c), channel_sum(x, c)), 1e-4);
}

TEST(Adjoints, DotProductTests) {
  const Shape s{16, 16, 3};
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = plan_kernel(random_tensor(s, rng()));
    const Image x = random_tensor(s, rng(), -1, 1);
    const Image v = random_tensor(k.padded, rng(), -1, 1);
    // P / P^T
    const Image px = forward_P(k, x).values;
    EXPECT_LE(adjoint_mismatch(dot(px, v), dot(x, adjoint_P(k, PaddedField<float>{v})), norm2(px), norm2(v)), 1e-4);
    // C / C^T
    const Image cv = crop_C(k, v);
    EXPECT_LE(adjoint_mismatch(dot(cv, x), dot(v, pad_Ct(k, x).values), norm2(cv), norm2(x)), 1e-6);
    // Psi / Psi^T
    GradientField<float> g(s);
    g.dh = random_tensor(s, rng(), -1, 1);
    g.dw = random_tensor(s, rng(), -1, 1);
    const auto psx = tv_Psi(x);
    EXPECT_LE(adjoint_mismatch(dot(psx, g), dot(x, tv_Psit(g)), std::sqrt(dot(psx, psx)), std::sqrt(dot(g, g))), 1e-5);
  }
}

TEST(Crop, Geometry) {
  const Shape s{6, 4, 2};
  const auto k = plan_kernel(random_tensor(s, 1));
  const Image y = random_tensor(s, 2, 0.5, 1.0);
  EXPECT_TRUE(crop_C(k, pad_Ct(k, y)) == y);
  const Image v = random_tensor(k.padded, 3, 0.5, 1.0);
  const Image m = pad_Ct(k, crop_C(k, v)).values;
  std::size_t zeros = 0;
  for (float e : m.values()) zeros += e == 0.0f;
  EXPECT_EQ(zeros * 4, m.size() * 3);
  EXPECT_EQ(k.crop_top, 3);
  EXPECT_EQ(k.crop_left, 2);
}

TEST(Psi, MatchesShiftedDifferencesAndConstant) {
  const Tensor3<double> x = random_tensor<double>(Shape{8, 8, 2}, 5);
  const auto g = tv_Psi(x);
  EXPECT_LE(max_abs_diff(g.dh, roll(x, 1, 0) - x), 1e-15);
  EXPECT_LE(max_abs_diff(g.dw, roll(x, 0, 1) - x), 1e-15);
  // Psi^T g = (g shifted down - g) + (g shifted right - g)
  const Tensor3<double> want = (roll(g.dh, -1, 0) - g.dh) + (roll(g.dw, 0, -1) - g.dw);
  EXPECT_LE(max_abs_diff(tv_Psit(g), want), 1e-15);
  const auto z = tv_Psi(Image(Shape{5, 7, 3}, 0.25f));
  EXPECT_EQ(norm1(z.dh) + norm1(z.dw), 0.0);
}

TEST(Psi, LaplacianEigenvalueOnSinusoid) {
  const int h = 16, w = 12;
  for (int fh = 0; fh < 4; ++fh)
    for (int fw = 0; fw < 4; ++fw) {
      Tensor3<double> x(h, w, 1);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) x(i, j, 0) = std::cos(2 * std::numbers::pi * (fh * i / double(h) + fw * j / double(w)));
      const double lambda = 4 * std::pow(std::sin(std::numbers::pi * fh / h), 2) +
                            4 * std::pow(std::sin(std::numbers::pi * fw / w), 2);
      EXPECT_LE(max_abs_diff(tv_Psit(tv_Psi(x)), x * lambda), 1e-4);
    }
}

TEST(Kernel, TvEigenMatchesPsiTPsiInFourier) {
  const Shape s{8, 6, 2};
  const auto k = plan_kernel(random_tensor<double>(s, 1));
  const Tensor3<double> x = random_tensor<double>(k.padded, 2, -1, 1);
  auto spec = k.fft->forward(x);
  for (std::size_t n = 0; n < spec.size(); ++n) spec[n] *= k.tv_eigen[n / s.channels];
  EXPECT_LE(max_abs_diff(k.fft->inverse(spec), tv_Psit(tv_Psi(x))), 1e-12);
}

TEST(Kernel, ChannelPermutationEquivariance) {
  const Shape s{8, 8, 3};
  const Image psf = random_tensor(s, 6), x = random_tensor(s, 7);
  auto perm = [](const Image& a) {
    Image b(a.shape());
    for (int i = 0; i < a.height(); ++i)
      for (int j = 0; j < a.width(); ++j)
        for (int c = 0; c < 3; ++c) b(i, j, c) = a(i, j, (c + 1) % 3);
    return b;
  };
  const auto k = plan_kernel(psf), kp = plan_kernel(perm(psf));
  EXPECT_LE(max_abs_diff(crop_C(kp, forward_P(kp, perm(x))), perm(crop_C(k, forward_P(k, x)))), 1e-6);
}
