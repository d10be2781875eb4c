// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance            run all criteria
//   acceptance 1 3 8      run a subset
//
// Exit status is 0 only if every selected criterion passes.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <unistd.h>

#include "lensless/canned.hpp"
#include "lensless/commands.hpp"
#include "lensless/fista.hpp"
#include "lensless/runtime.hpp"
#include "lensless/tikhonov.hpp"
#include "test_support.hpp"

using namespace lensless;
using namespace lensless::testing;
namespace fs = std::filesystem;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records one check; every check is also listed in the detail line.
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [FAILED]");
  }
};

std::string num(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

std::string le(double v, double tol) { return num(v) + " <= " + num(tol); }
std::string ge(double v, double tol) { return num(v) + " >= " + num(tol); }

int threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("lensless_acceptance_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// ------------------------------------------------------------------ 1: operators

// Brute-force matrices built from index formulas, one channel at a time.
// Flat index of (i, j) on an h x w grid is i * w + j.

Mat dense_P(const Tensor3<double>& psf, int c) {
  const int h = psf.height(), w = psf.width(), ph = 2 * h, pw = 2 * w;
  // Intensity-weighted centroid over all channels, rounded to a pixel.
  double si = 0.0, sj = 0.0, tot = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < psf.channels(); ++k) {
        tot += psf(i, j, k);
        si += psf(i, j, k) * i;
        sj += psf(i, j, k) * j;
      }
  const int ci = static_cast<int>(std::lround(si / tot)), cj = static_cast<int>(std::lround(sj / tot));
  double norm = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) norm += psf(i, j, c);
  Mat m = Mat::Zero(ph * pw, h * w);
  for (int xi = 0; xi < h; ++xi)
    for (int xj = 0; xj < w; ++xj)
      for (int pi = 0; pi < h; ++pi)
        for (int pj = 0; pj < w; ++pj) {
          const int oi = ((xi + h / 2 + pi - ci) % ph + ph) % ph;
          const int oj = ((xj + w / 2 + pj - cj) % pw + pw) % pw;
          m(oi * pw + oj, xi * w + xj) += psf(pi, pj, c) / norm;
        }
  return m;
}

Mat dense_C(int h, int w) {
  Mat m = Mat::Zero(h * w, 4 * h * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) m(i * w + j, (i + h / 2) * 2 * w + (j + w / 2)) = 1.0;
  return m;
}

// Stacked [D_h; D_w] circular forward differences.
Mat dense_Psi(int h, int w) {
  const int n = h * w;
  Mat m = Mat::Zero(2 * n, n);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int p = i * w + j;
      m(p, ((i + 1) % h) * w + j) += 1.0;
      m(p, p) -= 1.0;
      m(n + p, i * w + (j + 1) % w) += 1.0;
      m(n + p, p) -= 1.0;
    }
  return m;
}

Vec channel(const Image& t, int c) {
  Vec v(t.height() * t.width());
  for (int i = 0; i < t.height(); ++i)
    for (int j = 0; j < t.width(); ++j) v(i * t.width() + j) = t(i, j, c);
  return v;
}

Vec channel(const GradientField<float>& g, int c) {
  const Vec a = channel(g.dh, c), b = channel(g.dw, c);
  Vec v(a.size() + b.size());
  v << a, b;
  return v;
}

GradientField<float> split_gradient(const Image& dh, const Image& dw) {
  GradientField<float> g(dh.shape());
  g.dh = dh;
  g.dw = dw;
  return g;
}

double rel(const Vec& got, const Vec& want) { return (got - want).norm() / std::max(want.norm(), 1e-300); }

double adjoint_gap(double lhs, double rhs, double norm_ax, double norm_y) {
  return std::abs(lhs - rhs) / std::max(norm_ax * norm_y, 1e-300);
}

Outcome operators() {
  Outcome o;
  const Shape s{8, 8, 3};
  const int h = s.height, w = s.width;
  const Mat C = dense_C(h, w), Psi_s = dense_Psi(h, w), Psi_p = dense_Psi(2 * h, 2 * w);
  double worst[6] = {0, 0, 0, 0, 0, 0};  // P, P^T, C, C^T, Psi, Psi^T
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Image psf = random_tensor(s, 100 + seed);
    const auto k = plan_kernel(psf);
    const Image x = random_tensor(s, 200 + seed, -1, 1);
    const Image v = random_tensor(k.padded, 300 + seed, -1, 1);
    const Image px = forward_P(k, x).values, ptv = adjoint_P(k, PaddedField<float>{v});
    const Image cv = crop_C(k, v), ctx = pad_Ct(k, x).values;
    const auto psx = tv_Psi(x), psv = tv_Psi(v);
    const Image gh_s = random_tensor(s, 400 + seed, -1, 1), gw_s = random_tensor(s, 500 + seed, -1, 1);
    const Image gh_p = random_tensor(k.padded, 600 + seed, -1, 1), gw_p = random_tensor(k.padded, 700 + seed, -1, 1);
    const Image pst_s = tv_Psit(split_gradient(gh_s, gw_s)), pst_p = tv_Psit(split_gradient(gh_p, gw_p));
    const Tensor3<double> psf_d = psf.cast<double>();
    for (int c = 0; c < s.channels; ++c) {
      const Mat P = dense_P(psf_d, c);
      worst[0] = std::max(worst[0], rel(channel(px, c), P * channel(x, c)));
      worst[1] = std::max(worst[1], rel(channel(ptv, c), P.transpose() * channel(v, c)));
      worst[2] = std::max(worst[2], rel(channel(cv, c), C * channel(v, c)));
      worst[3] = std::max(worst[3], rel(channel(ctx, c), C.transpose() * channel(x, c)));
      worst[4] = std::max(worst[4], rel(channel(psx, c), Psi_s * channel(x, c)));
      worst[4] = std::max(worst[4], rel(channel(psv, c), Psi_p * channel(v, c)));
      worst[5] = std::max(worst[5], rel(channel(pst_s, c), Psi_s.transpose() * channel(split_gradient(gh_s, gw_s), c)));
      worst[5] = std::max(worst[5], rel(channel(pst_p, c), Psi_p.transpose() * channel(split_gradient(gh_p, gw_p), c)));
    }
  }
  const char* names[6] = {"P", "P^T", "C", "C^T", "Psi", "Psi^T"};
  for (int i = 0; i < 6; ++i) o.check(worst[i] <= 1e-5, std::string(names[i]) + " vs dense " + le(worst[i], 1e-5));

  std::mt19937_64 rng(77);
  double gap_p = 0, gap_c = 0, gap_psi = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = plan_kernel(random_tensor(s, rng()));
    const Image x = random_tensor(s, rng(), -1, 1);
    const Image v = random_tensor(k.padded, rng(), -1, 1);
    const Image px = forward_P(k, x).values;
    gap_p = std::max(gap_p, adjoint_gap(dot(px, v), dot(x, adjoint_P(k, PaddedField<float>{v})), norm2(px), norm2(v)));
    const Image cv = crop_C(k, v);
    gap_c = std::max(gap_c, adjoint_gap(dot(cv, x), dot(v, pad_Ct(k, x).values), norm2(cv), norm2(x)));
    const auto g = split_gradient(random_tensor(k.padded, rng(), -1, 1), random_tensor(k.padded, rng(), -1, 1));
    const auto psv = tv_Psi(v);
    gap_psi = std::max(gap_psi, adjoint_gap(dot(psv, g), dot(v, tv_Psit(g)), std::sqrt(dot(psv, psv)),
                                            std::sqrt(dot(g, g))));
  }
  o.check(std::max({gap_p, gap_c, gap_psi}) <= 1e-4,
          "adjoint dot-product over 100 trials (P " + num(gap_p) + ", C " + num(gap_c) + ", Psi " + num(gap_psi) +
              ") <= 1e-4");
  return o;
}

// ------------------------------------------------------------------ 2: solvers

Outcome solvers() {
  Outcome o;
  const auto c = canned_instance(32);
  const float m = max_value(c.measurement);
  const auto r = admm100(c.measurement * (1.0f / m), c.kernel);
  const auto& t = r.trace;
  const double ru = t.residual_u.back() / t.residual_u.front(), rv = t.residual_v.back() / t.residual_v.front(),
               rw = t.residual_w.back() / t.residual_w.front();
  o.check(std::max({ru, rv, rw}) <= 0.1, "ADMM100 residual ratios (u " + num(ru) + ", v " + num(rv) + ", w " +
                                             num(rw) + ") <= 0.1");
  const double p = psnr(c.scene, r.image * m);
  o.check(p >= 20.0, "ADMM100 PSNR " + ge(p, 20.0) + " dB");

  FistaOptions fo;
  fo.tau = kAdmmTau;
  fo.iterations = 100;
  const auto f = fista_reconstruct(c.measurement * (1.0f / m), c.kernel, fo);
  double worst_rise = 0.0;
  for (std::size_t i = 5; i < f.trace.objective.size(); ++i)
    worst_rise = std::max(worst_rise, f.trace.objective[i] - f.trace.objective[i - 1]);
  o.check(worst_rise <= 0.0, "FISTA objective rise after iteration 5 " + le(worst_rise, 0.0));

  // Sparse caustic-like PSF: see the tikhonov tests for why not the diffuser.
  const auto k = plan_kernel(sparse_psf<double>(Shape{32, 32, 3}, 7));
  const Tensor3<double> scene = synth_scene<double>(kCannedSceneSeed, k.padded, kCannedSceneComplexity);
  const double e = rel_err(tikhonov_circular(k, circular_forward(k, scene), 1e-6), scene);
  o.check(e <= 1e-3, "Tikhonov eps=1e-6 circular recovery " + le(e, 1e-3));
  return o;
}

// ------------------------------------------------------------------ 3: gradients

using PD = Pipeline<double>;

// Central differences at h and h/4. When they disagree at the tolerance level
// the step straddles a kink (leaky ReLU, soft threshold, clamp) somewhere
// downstream and the entry is skipped.
struct FdResult {
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
};

FdResult fd_check(const PD& p, const Example<double>& e, const LossWeights& w, std::size_t begin, std::size_t end,
                  bool relative_step) {
  const std::vector<Example<double>> data{e};
  const auto g = batch_gradient(p, data, {0}, w).grad;
  auto theta = p.params();
  double scale = 0.0;
  for (std::size_t n = begin; n < end; ++n) scale = std::max(scale, std::abs(g[n]));
  FdResult r;
  for (std::size_t n = begin; n < end; ++n) {
    auto loss = [&] {
      PD q = p;
      q.set_params(theta);
      return batch_gradient(q, data, {0}, w).loss;
    };
    const double h = relative_step ? 1e-4 * std::max(std::abs(theta[n]), 1e-8) : 1e-5;
    const double a = central_difference(theta[n], h, loss);
    const double b = central_difference(theta[n], h / 4, loss);
    const double floor = 1e-4 * scale;
    if (std::abs(a - b) > 1e-3 * std::max({std::abs(a), std::abs(b), floor})) {
      ++r.skipped;
      continue;
    }
    ++r.checked;
    const double rr = std::abs(g[n] - a) / std::max({std::abs(g[n]), std::abs(a), floor, 1e-300});
    r.worst = std::max(r.worst, rr);
  }
  return r;
}

Outcome gradients() {
  Outcome o;
  const Shape s{16, 16, 3};
  Example<double> e;
  e.scene = synth_scene<double>(3, s, 8);
  const Tensor3<double> psf = synth_psf<double>(7, s, 2.0);
  e.measurement = add_shot_noise(simulate(e.scene, plan_kernel(psf)), NoiseSpec{NoiseKind::shot, 25.0, 3});
  LossWeights w;
  w.alpha = 0.1;  // the auxiliary path reaches every block
  const ProcessorArch arch = default_conv_arch(3);
  auto randomize = [](ProcessorParams<double>& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& v : p.values) v = u(rng);
  };

  auto report = [&](const std::string& name, const FdResult& r) {
    const bool ok = r.worst <= 1e-3 && r.checked > 0 && r.skipped * 10 <= r.checked + r.skipped;
    o.check(ok, name + " " + le(r.worst, 1e-3) + " (" + std::to_string(r.checked) + " checked, " +
                    std::to_string(r.skipped) + " at kinks)");
  };

  InversionConfig inv;
  inv.n_iter = 3;
  auto u = PD::make(psf, inv, arch, arch, 5, Trainable{true, true, true});
  randomize(u.pre, 11);
  randomize(u.post, 12);
  u.unrolled = UnrolledParams<double>::from_hyper(3, AdmmHyper{3e-3, 2e-3, 1e-3, 2e-4});
  u.unrolled.raw_tau[1] += 0.3;
  u.unrolled.raw_rho_x[2] -= 0.2;
  const std::size_t n_pre = u.pre.values.size(), n_post = u.post.values.size(), L = 3;
  report("pre conv", fd_check(u, e, w, 0, n_pre, false));
  const char* hyper[4] = {"rho_x", "rho_y", "rho_z", "tau"};
  for (std::size_t b = 0; b < 4; ++b) {
    report(std::string("per-iteration ") + hyper[b], fd_check(u, e, w, n_pre + b * L, n_pre + (b + 1) * L, false));
  }
  report("post conv", fd_check(u, e, w, n_pre + 4 * L, n_pre + 4 * L + n_post, false));

  inv.kind = InversionKind::tikhonov;
  inv.eps = 1e-3;
  auto t = PD::make(psf, inv, arch, arch, 5, Trainable{true, true, true});
  randomize(t.pre, 13);
  randomize(t.post, 14);
  report("Tikhonov eps", fd_check(t, e, w, n_pre, n_pre + 1, false));
  report("PSF leaf", fd_check(t, e, w, n_pre + 1, n_pre + 1 + t.psf.size(), true));
  return o;
}

// ------------------------------------------------------------------ 4: mismatch terms

Outcome mismatch_terms() {
  using namespace mismatch;
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> log_rho(-3.0, 0.0);
  double degenerate = 0.0, remult = 0.0, linear = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{8, 8, 1};
    const auto psf = random_tensor<double>(s, rng());
    const double rx = std::pow(10.0, log_rho(rng)), ry = std::pow(10.0, log_rho(rng)),
                 rz = std::pow(10.0, log_rho(rng));

    const auto exact = build_dense(psf, psf);
    const auto we = compute_w_terms(exact, rx, ry, rz);
    const Matrix I = Matrix::Identity(exact.n_padded(), exact.n_padded());
    degenerate = std::max({degenerate, (we.W1 - I).cwiseAbs().maxCoeff(), we.W2.cwiseAbs().maxCoeff()});

    const auto m = build_dense(psf, perturb_psf(psf, 0.2, rng()));
    const auto w = compute_w_terms(m, rx, ry, rz);
    const Matrix A = w.W3 + rx * w.delta_P;
    Matrix rhs = rx * m.Delta_P.transpose();
    for (Eigen::Index j = 0; j < rhs.cols(); ++j) rhs.col(j) /= m.mask()[j] + rx;
    remult = std::max({remult, (A * w.W1 - w.W3).norm() / w.W3.norm(), (A * w.W2 - rhs).norm() / rhs.norm()});

    const auto x = random_tensor<double>(s, rng());
    const auto n1 = random_tensor<double>(s, rng(), -0.1, 0.1), n2 = random_tensor<double>(s, rng(), -0.1, 0.1);
    const double a = 0.5 + trial, b = -1.3;
    const Vector z = Vector::Zero(m.n_padded());
    const Vector t1 = decompose_update(m, w, x, n1, z, z).amplified_noise_term;
    const Vector t2 = decompose_update(m, w, x, n2, z, z).amplified_noise_term;
    const Vector t12 = decompose_update(m, w, x, n1 * a + n2 * b, z, z).amplified_noise_term;
    linear = std::max(linear, (t12 - (a * t1 + b * t2)).norm() / std::max((a * t1 + b * t2).norm(), 1e-300));
  }
  o.check(degenerate <= 1e-10, "Delta_P = 0 => W1 = I, W2 = 0: " + le(degenerate, 1e-10));
  o.check(remult <= 1e-8, "re-multiplication " + le(remult, 1e-8));
  o.check(linear <= 1e-10, "noise-term linearity " + le(linear, 1e-10));
  return o;
}

// ------------------------------------------------------------------ 5-7: scaled experiments

// Desk-scale training schedule shared by the scaled experiments.
struct Schedule {
  int size = 128;
  int n_train = 200;
  int n_test = 50;
  int n_iter = 5;
  int epochs = 10;
  int batch_size = 4;
  double lr = 3e-3;            // conv processors
  double inversion_lr = 3e-2;  // softplus-parametrized solver hyperparameters
};

Config experiment_config(const Schedule& s, const fs::path& data_dir) {
  Config c;
  c.seed = 1;
  c.data.out_dir = data_dir;
  c.data.shape = Shape{s.size, s.size, 3};
  c.data.n_train = s.n_train;
  c.data.n_test = s.n_test;
  c.data.noise = NoiseSpec{NoiseKind::shot, 20.0, 17};
  c.manifest = data_dir / "manifest.jsonl";
  c.inversion.kind = InversionKind::unrolled;
  c.inversion.n_iter = s.n_iter;
  c.epochs = s.epochs;
  c.batch_size = s.batch_size;
  c.adam.lr = s.lr;
  c.inversion_lr = s.inversion_lr;
  c.evaluate_each_epoch = false;
  return c;
}

struct Dataset {
  Image psf;
  std::vector<Example<float>> train, test;
  DatasetManifest manifest;
};

Dataset make_dataset(const Config& c) {
  cli::Context ctx;
  ctx.config = c;
  ctx.out = c.data.out_dir;
  ctx.threads = threads();
  std::ostringstream quiet;
  ctx.log = &quiet;
  Dataset d;
  d.manifest = cli::cmd_simulate(ctx);
  d.psf = cli::manifest_psf(d.manifest);
  d.train = load_examples(d.manifest, Split::train);
  d.test = load_examples(d.manifest, Split::test);
  return d;
}

Config with_stages(Config c, bool pre, bool post, double alpha = 0.0) {
  const ProcessorArch arch = default_conv_arch(c.data.shape.channels);
  c.pre = pre ? StageConfig{arch, true} : StageConfig{};
  c.post = post ? StageConfig{arch, true} : StageConfig{};
  c.loss.alpha = alpha;
  return c;
}

Pipeline<float> trained(const Config& c, const Dataset& d, const std::string& label) {
  auto p = build_pipeline(c, d.psf);
  auto opt = c.train_options(threads());
  auto state = initial_train_state(p, opt);
  const auto t0 = std::chrono::steady_clock::now();
  lensless::train<float>(p, d.train, d.test, opt, state);
  std::fprintf(stderr, "    trained %-14s %5zu params, final loss %.5f, %.0f s\n", label.c_str(), p.param_count(),
               state.history.back().train_loss,
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return p;
}

Outcome end_to_end() {
  Outcome o;
  ScratchDir dir("e2e");
  const Config base = experiment_config(Schedule{}, dir / "data");
  const Dataset d = make_dataset(base);

  const auto untrained = build_pipeline(with_stages(base, false, false), d.psf);
  const double p_untrained = evaluate(untrained, d.test, threads()).psnr_summary().mean;
  auto score = [&](bool pre, bool post, const std::string& label) {
    return evaluate(trained(with_stages(base, pre, post), d, label), d.test, threads()).psnr_summary().mean;
  };
  const double p_inv = score(false, false, "inv");
  const double p_inv_post = score(false, true, "inv+post");
  const double p_all = score(true, true, "pre+inv+post");
  o.detail << "test PSNR untrained " << num(p_untrained, 4) << ", inv " << num(p_inv, 4) << ", inv+post "
           << num(p_inv_post, 4) << ", pre+inv+post " << num(p_all, 4) << " dB";
  o.check(p_inv - p_untrained >= 0.5, "(a) trained - untrained " + ge(p_inv - p_untrained, 0.5));
  o.check(p_all - p_inv >= 0.5, "(b) pre+inv+post - inv " + ge(p_all - p_inv, 0.5));
  o.check(p_all - p_inv_post >= -0.1, "(c) pre+inv+post - inv+post " + ge(p_all - p_inv_post, -0.1));
  return o;
}

Outcome snr_robustness() {
  Outcome o;
  ScratchDir dir("snr");
  const Config base = experiment_config(Schedule{}, dir / "data");
  const Dataset d = make_dataset(base);
  const auto kernel = plan_kernel(d.psf);
  const auto pre = trained(with_stages(base, true, false), d, "pre+inv");
  const auto post = trained(with_stages(base, false, true), d, "inv+post");
  const double levels[5] = {10, 15, 20, 25, 30};
  double at_pre[5], at_post[5];
  for (int i = 0; i < 5; ++i) {
    const auto test = load_examples(d.manifest, Split::test, levels[i], &kernel);
    at_pre[i] = evaluate(pre, test, threads()).psnr_summary().mean;
    at_post[i] = evaluate(post, test, threads()).psnr_summary().mean;
  }
  o.detail << "PSNR at {10,15,20,25,30} dB: pre+inv";
  for (double v : at_pre) o.detail << " " << num(v, 4);
  o.detail << ", inv+post";
  for (double v : at_post) o.detail << " " << num(v, 4);
  const double drop_pre = at_pre[2] - at_pre[0], drop_post = at_post[2] - at_post[0];
  o.check(drop_pre < drop_post, "20->10 dB drop pre+inv " + num(drop_pre) + " < inv+post " + num(drop_post));
  return o;
}

Outcome auxiliary_loss() {
  Outcome o;
  ScratchDir dir("aux");
  // The residual post-processor starts as the identity, so the final loss
  // already reaches the inversion output and alpha only tilts the objective.
  // Smaller steps keep the paired runs on comparable trajectories.
  Schedule s;
  s.lr = 1e-3;
  s.inversion_lr = 1e-2;
  const Config base = experiment_config(s, dir / "data");
  const Dataset d = make_dataset(base);
  const auto plain = evaluate(trained(with_stages(base, true, true, 0.0), d, "alpha=0"), d.test, threads());
  const auto aux = evaluate(trained(with_stages(base, true, true, 0.1), d, "alpha=0.1"), d.test, threads());
  const double inv0 = plain.inv_psnr_summary().mean, inv1 = aux.inv_psnr_summary().mean;
  const double f0 = plain.psnr_summary().mean, f1 = aux.psnr_summary().mean;
  o.check(inv1 > inv0, "inversion-output PSNR alpha=0.1 " + num(inv1, 4) + " > alpha=0 " + num(inv0, 4));
  o.check(std::abs(f1 - f0) <= 1.0, "final PSNR |" + num(f1, 4) + " - " + num(f0, 4) + "| " +
                                        le(std::abs(f1 - f0), 1.0));
  return o;
}

// ------------------------------------------------------------------ 8: determinism

struct Runs {
  std::vector<double> metrics;  // every reported metric, in order
  std::map<std::string, std::string> files;
};

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file_bytes(e.path());
  return out;
}

Runs run_all_commands(const fs::path& root, int n_threads) {
  const std::string text =
      "seed = 4\n[data]\nheight = 32\nwidth = 32\nn_train = 16\nn_test = 6\n"
      "[inversion]\nkind = \"unrolled\"\nn_iter = 3\n"
      "[pre]\nkind = \"conv_stack\"\ntrainable = true\n[post]\nkind = \"conv_stack\"\ntrainable = true\n"
      "[train]\nepochs = 2\nbatch_size = 4\nlr = 1e-2\n[benchmark]\nunrolled_iterations = 3\nepochs = 1\n"
      "[mismatch]\nsize = 6\ndraws = 5\n";
  std::ostringstream quiet;
  cli::Context ctx;
  ctx.config = parse_config(text, "determinism");
  ctx.config.manifest = root / "data" / "manifest.jsonl";
  ctx.threads = n_threads;
  ctx.log = &quiet;
  Runs r;

  ctx.out = root / "data";
  const auto m = cli::cmd_simulate(ctx);
  r.files = read_tree(root / "data");

  ctx.out = root / "train";
  const auto t = cli::cmd_train(ctx, {});
  for (const auto& rec : t.state.history) r.metrics.insert(r.metrics.end(), {rec.train_loss, rec.test_psnr, rec.test_ssim});

  ctx.out = root / "reconstruct";
  cli::ReconstructArgs ra;
  ra.checkpoint = t.checkpoint;
  ra.measurement = m.resolve(m.split(Split::test).front()->measurement_path);
  ra.output = root / "reconstruct" / "x.ltnsr";
  ra.dump_intermediates = true;
  cli::cmd_reconstruct(ctx, ra);

  ctx.out = root / "evaluate";
  cli::EvaluateArgs ea;
  ea.checkpoint = t.checkpoint;
  ea.snr_override = {10, 20};
  for (const auto& row : cli::cmd_evaluate(ctx, ea))
    r.metrics.insert(r.metrics.end(), {row.psnr.mean, row.psnr.stddev, row.ssim.mean, row.inv_psnr.mean});

  ctx.out = root / "benchmark";
  for (const auto& row : cli::cmd_benchmark(ctx, {}))
    r.metrics.insert(r.metrics.end(), {row.psnr_db, row.ssim, static_cast<double>(row.learnable)});

  ctx.out = root / "mismatch";
  for (const auto& row : cli::cmd_analyze_mismatch(ctx))
    r.metrics.insert(r.metrics.end(), {row.delta_norm, row.w1_deviation, row.w2_norm, row.mismatch_norm,
                                       row.noise_amplification});
  for (const char* sub : {"reconstruct", "evaluate", "mismatch"})
    for (auto& [name, bytes] : read_tree(root / sub)) r.files[std::string(sub) + "/" + name] = bytes;
  return r;
}

Outcome determinism() {
  Outcome o;
  ScratchDir a("det_a"), b("det_b"), c("det_c");
  const Runs ra = run_all_commands(a.path(), 1), rb = run_all_commands(b.path(), 1),
             rc = run_all_commands(c.path(), std::max(2, threads()));
  auto compare = [&](const Runs& x, const Runs& y, const std::string& label) {
    double worst = x.metrics.size() == y.metrics.size() ? 0.0 : 1e300;
    for (std::size_t i = 0; i < std::min(x.metrics.size(), y.metrics.size()); ++i)
      worst = std::max(worst, std::abs(x.metrics[i] - y.metrics[i]));
    o.check(worst <= 1e-6, label + ": " + std::to_string(x.metrics.size()) + " metrics, max diff " + le(worst, 1e-6));
    std::size_t differing = x.files.size() == y.files.size() ? 0 : 1;
    for (const auto& [name, bytes] : x.files) {
      const auto it = y.files.find(name);
      differing += it == y.files.end() || it->second != bytes;
    }
    o.check(differing == 0, label + ": " + std::to_string(x.files.size()) + " dataset/output files byte-identical (" +
                                std::to_string(differing) + " differ)");
  };
  compare(ra, rb, "rerun");
  compare(ra, rc, "rerun with more workers");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::vector<Criterion> all = {
      {1, "operator correctness", 10, operators},
      {2, "solver sanity", 60, solvers},
      {3, "gradient correctness", 300, gradients},
      {4, "mismatch-term identities", 120, mismatch_terms},
      {5, "scaled end-to-end ordering", 900, end_to_end},
      {6, "SNR robustness direction", 1800, snr_robustness},
      {7, "auxiliary-loss effect", 1800, auxiliary_loss},
      {8, "determinism", 0, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id < 1 || id > static_cast<int>(all.size())) {
      std::cerr << "usage: acceptance [criterion ...]   (criteria 1-" << all.size() << ")\n";
      return 2;
    }
    selected.insert(id);
  }
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0) o.check(secs <= c.budget_s, "runtime " + num(secs, 3) + " s <= " + num(c.budget_s) + " s");
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
