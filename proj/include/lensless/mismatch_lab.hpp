#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "lensless/error.hpp"
#include "lensless/fourier_ops.hpp"

namespace lensless::mismatch {

// Dense linear algebra is cubic in the padded size; 12x12 scenes keep the
// padded system at 576 unknowns per channel.
inline constexpr int kMaxSceneSide = 12;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense operators on the padded grid. `P` and `P_hat` are circular
/// convolutions over the whole padded grid (the space the solver's x lives
/// in); forward_matrix() restricts them to sensor-window scenes, which is
/// what forward_P computes.
struct DenseModel {
  Shape sensor, padded;
  Matrix P, P_hat, Delta_P;
  Matrix C;  // sensor x padded, one 1 per row
  FrequencyKernel<double> kernel, kernel_hat;

  Eigen::Index n_padded() const { return P.rows(); }
  Eigen::Index n_sensor() const { return C.rows(); }
  Matrix forward_matrix() const { return P * C.transpose(); }
  Vector mask() const { return C.transpose() * Vector::Ones(n_sensor()); }  // diagonal of C^T C
};

struct WTerms {
  Matrix W1, W2, W3, delta_P;
  double rho_x = 0, rho_y = 0, rho_z = 0;
};

struct UpdateTerms {
  Vector noisy_term;            // W1 x_hat
  Vector mismatch_term;         // W2 C^T C P x
  Vector amplified_noise_term;  // W2 C^T n
  Vector residual;              // x_k minus the three terms above
};

inline Vector flatten(const Tensor3<double>& t) { return Eigen::Map<const Vector>(t.data(), t.size()); }

inline Tensor3<double> unflatten(const Vector& v, Shape s) {
  Tensor3<double> t(s);
  for (std::size_t n = 0; n < t.size(); ++n) t[n] = v[static_cast<Eigen::Index>(n)];
  return t;
}

inline Matrix operator_matrix(const FrequencyKernel<double>& k) {
  const auto n = static_cast<Eigen::Index>(k.padded.size());
  Matrix M(n, n);
  Tensor3<double> e(k.padded);
  for (Eigen::Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    M.col(j) = flatten(circular_forward(k, e));
    e[j] = 0.0;
  }
  return M;
}

/// Columns come from pushing basis vectors through the FFT operator. The
/// estimate is planned with the true PSF's shift so Delta_P holds only the
/// intensity error.
inline DenseModel build_dense(const Tensor3<double>& psf, const Tensor3<double>& psf_hat) {
  if (!(psf.shape() == psf_hat.shape())) throw ShapeError("build_dense: PSF and estimate differ in shape");
  if (psf.height() > kMaxSceneSide || psf.width() > kMaxSceneSide) {
    throw ConfigError("build_dense: scene " + psf.shape().str() + " exceeds the " + std::to_string(kMaxSceneSide) +
                      "x" + std::to_string(kMaxSceneSide) + " dense limit");
  }
  DenseModel m;
  m.kernel = plan_kernel(psf);
  m.kernel_hat = plan_kernel_with_shift(psf_hat, m.kernel.centroid_i, m.kernel.centroid_j);
  m.sensor = m.kernel.sensor;
  m.padded = m.kernel.padded;
  m.P = operator_matrix(m.kernel);
  m.P_hat = operator_matrix(m.kernel_hat);
  m.Delta_P = m.P - m.P_hat;
  const auto np = static_cast<Eigen::Index>(m.padded.size()), ns = static_cast<Eigen::Index>(m.sensor.size());
  m.C = Matrix::Zero(ns, np);
  const int c = m.sensor.channels;
  for (int i = 0; i < m.sensor.height; ++i)
    for (int j = 0; j < m.sensor.width; ++j)
      for (int k = 0; k < c; ++k) {
        const Eigen::Index row = (static_cast<Eigen::Index>(i) * m.sensor.width + j) * c + k;
        const Eigen::Index col =
            (static_cast<Eigen::Index>(i + m.kernel.crop_top) * m.padded.width + j + m.kernel.crop_left) * c + k;
        m.C(row, col) = 1.0;
      }
  return m;
}

/// W1, W2, W3 and delta_P exactly as printed, including the rho_z C^T C
/// pairing in W3. The transpose of the true-model perturbation in delta_P is
/// read as Delta_P.
inline WTerms compute_w_terms(const DenseModel& m, double rho_x, double rho_y, double rho_z) {
  if (!(rho_x > 0 && rho_y > 0 && rho_z > 0)) throw ConfigError("compute_w_terms: rhos must be positive");
  WTerms w;
  w.rho_x = rho_x;
  w.rho_y = rho_y;
  w.rho_z = rho_z;
  const Eigen::Index n = m.n_padded();
  const Vector mask = m.mask();
  w.W3 = rho_x * (m.P_hat.transpose() * m.P_hat);
  w.W3.diagonal() += rho_z * mask + Vector::Constant(n, rho_y);
  w.delta_P = m.Delta_P.transpose() * m.P + m.P_hat.transpose() * m.Delta_P;

  const Matrix A = w.W3 + rho_x * w.delta_P;
  const Eigen::PartialPivLU<Matrix> lu(A);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-14)) {
    throw NumericalError("compute_w_terms: W3 + rho_x delta_P is singular (condition estimate " +
                         std::to_string(rcond > 0 ? 1.0 / rcond : INFINITY) + ")");
  }
  w.W1 = lu.solve(w.W3);
  const Vector dinv = (mask.array() + rho_x).inverse().matrix();
  w.W2 = lu.solve(rho_x * (m.Delta_P.transpose() * dinv.asDiagonal()));
  return w;
}

/// Multiplicative PSF error: psf * (1 + scale * u), u uniform in [-1, 1].
/// Stays non-negative for scale <= 1.
inline Tensor3<double> perturb_psf(const Tensor3<double>& psf, double scale, std::uint64_t seed) {
  if (!(scale >= 0.0 && scale <= 1.0)) throw ConfigError("perturb_psf: scale must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor3<double> out(psf.shape());
  for (std::size_t n = 0; n < psf.size(); ++n) out[n] = psf[n] * (1.0 + scale * u(rng));
  return out;
}

/// x_true and n are sensor-shaped; x_hat_k and x_k live on the padded grid.
inline UpdateTerms decompose_update(const DenseModel& m, const WTerms& w, const Tensor3<double>& x_true,
                                    const Tensor3<double>& n, const Vector& x_hat_k, const Vector& x_k) {
  if (!(x_true.shape() == m.sensor) || !(n.shape() == m.sensor)) {
    throw ShapeError("decompose_update: scene and noise must have shape " + m.sensor.str());
  }
  if (x_hat_k.size() != m.n_padded() || x_k.size() != m.n_padded() || w.W1.rows() != m.n_padded()) {
    throw ShapeError("decompose_update: iterates and W terms must live on the padded grid");
  }
  UpdateTerms u;
  u.noisy_term = w.W1 * x_hat_k;
  const Vector px = m.P * (m.C.transpose() * flatten(x_true));
  u.mismatch_term = w.W2 * (m.mask().asDiagonal() * px);
  u.amplified_noise_term = w.W2 * (m.C.transpose() * flatten(n));
  u.residual = x_k - u.noisy_term - u.mismatch_term - u.amplified_noise_term;
  return u;
}

}  // namespace lensless::mismatch
