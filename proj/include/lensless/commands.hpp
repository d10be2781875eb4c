#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lensless/checkpoint.hpp"
#include "lensless/config.hpp"
#include "lensless/dataset.hpp"
#include "lensless/mismatch_lab.hpp"
#include "lensless/training.hpp"

// Implementations of the command-line verbs. tools/lensless.cpp only parses
// arguments and maps exceptions onto exit codes.
namespace lensless::cli {

namespace fs = std::filesystem;

struct Context {
  Config config;
  fs::path out = ".";
  int threads = 1;
  std::ostream* log = &std::cout;
};

inline DatasetManifest open_manifest(const Context& ctx, const fs::path& override_path) {
  const fs::path p = override_path.empty() ? ctx.config.manifest : override_path;
  if (!fs::exists(p)) throw IoError("manifest " + p.string() + " does not exist");
  return read_manifest(p);
}

inline Image manifest_psf(const DatasetManifest& m) { return load_tensor(m.resolve(m.psf_path)); }

inline void write_text(const fs::path& path, const std::string& text) { write_file_bytes(path, text); }

// ---------------------------------------------------------------- simulate

inline DatasetManifest cmd_simulate(const Context& ctx) {
  DatasetConfig d = ctx.config.data;
  d.out_dir = ctx.out;
  d.threads = ctx.threads;
  auto m = gen_dataset(d);
  *ctx.log << "wrote " << m.split(Split::train).size() << " train + " << m.split(Split::test).size()
           << " test pairs to " << m.location.string() << "\n";
  return m;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path manifest;
  fs::path resume;
  int epochs = -1;                                        // overrides [train] epochs when > 0
  double alpha = std::numeric_limits<double>::quiet_NaN();  // overrides [loss] alpha when set
};

struct TrainResult {
  Config config;
  Pipeline<float> pipeline;
  TrainState state;
  fs::path checkpoint;
};

inline std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch %3d  loss %.6g  test PSNR %.3f dB  SSIM %.4f  (%.1f s)", r.epoch,
                r.train_loss, r.test_psnr, r.test_ssim, r.wall_s);
  return buf;
}

inline TrainResult cmd_train(const Context& ctx, const TrainArgs& a) {
  TrainResult res;
  if (!a.resume.empty()) {
    auto r = restore(load_checkpoint(a.resume));
    res.config = std::move(r.config);
    res.pipeline = std::move(r.pipeline);
    res.state = std::move(r.state);
  } else {
    res.config = ctx.config;
  }
  if (a.epochs > 0) res.config.epochs = a.epochs;
  if (!std::isnan(a.alpha)) res.config.loss.alpha = a.alpha;
  validate(res.config.loss);

  const auto m = open_manifest(ctx, a.manifest);
  const Image psf = manifest_psf(m);
  if (a.resume.empty()) {
    res.pipeline = build_pipeline(res.config, psf);
  } else if (!(res.pipeline.kernel.sensor == psf.shape())) {
    throw ShapeError("checkpoint sensor shape " + res.pipeline.kernel.sensor.str() + " does not match dataset " +
                     psf.shape().str());
  }
  const auto train_set = load_examples(m, Split::train);
  const auto test_set = load_examples(m, Split::test);
  const auto opt = res.config.train_options(ctx.threads);
  if (a.resume.empty()) res.state = initial_train_state(res.pipeline, opt);

  fs::create_directories(ctx.out);
  res.checkpoint = ctx.out / "checkpoint.ckpt";
  const fs::path history = ctx.out / "history.jsonl";
  if (a.resume.empty()) write_text(history, "");
  *ctx.log << "training " << res.pipeline.param_count() << " parameters on " << train_set.size() << " images\n";
  lensless::train<float>(res.pipeline, train_set, test_set, opt, res.state, [&](const Pipeline<float>& p, const TrainState& s) {
    const auto& rec = s.history.back();
    *ctx.log << format_epoch(rec) << std::endl;
    std::ofstream h(history, std::ios::app);
    h << rec.to_json().dump() << "\n";
    if (!h) throw IoError("cannot append to " + history.string());
    save_checkpoint(make_checkpoint(res.config, p, s), res.checkpoint);
  });
  return res;
}

// ---------------------------------------------------------------- reconstruct

struct ReconstructArgs {
  fs::path checkpoint;   // trained pipeline; otherwise the config builds an untrained one
  fs::path psf;          // PSF for the config route (defaults to the config's PSF)
  fs::path measurement;  // LTNSR1 or PNG
  fs::path output;       // defaults to <out>/reconstruction.png
  fs::path reference;    // optional ground truth for a PSNR printout
  bool dump_intermediates = false;
};

inline void save_image_any(const Image& t, const fs::path& path) {
  if (path.extension() == ".ltnsr") {
    save_tensor(t, path);
  } else {
    save_png(t, path);
  }
}

inline StageOutputs<float> cmd_reconstruct(const Context& ctx, const ReconstructArgs& a) {
  Pipeline<float> p;
  if (!a.checkpoint.empty()) {
    p = restore(load_checkpoint(a.checkpoint)).pipeline;
  } else {
    const Image psf = a.psf.empty() ? dataset_psf(ctx.config.data) : load_image_any(a.psf);
    p = build_pipeline(ctx.config, psf);
  }
  if (a.measurement.empty()) throw ConfigError("reconstruct: --measurement is required");
  const Image y = load_image_any(a.measurement);
  const auto out = p.run(y);
  const fs::path target = a.output.empty() ? ctx.out / "reconstruction.png" : a.output;
  save_image_any(out.post, target);
  if (a.dump_intermediates) {
    save_png(out.pre, ctx.out / "01_pre.png");
    save_png(out.inv, ctx.out / "02_inv.png");
    save_png(out.post, ctx.out / "03_post.png");
  }
  *ctx.log << "wrote " << target.string() << "\n";
  if (!a.reference.empty()) {
    const auto r = evaluate_metrics(load_image_any(a.reference), out.post);
    *ctx.log << "PSNR " << r.psnr_db << " dB  SSIM " << r.ssim << "\n";
  }
  return out;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path checkpoint;
  fs::path manifest;
  std::vector<double> snr_override;
};

struct EvalRow {
  double snr_db = std::numeric_limits<double>::quiet_NaN();  // NaN: stored measurements
  std::size_t n = 0;
  MetricSummary psnr, ssim, inv_psnr, inv_ssim;
};

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.imbue(std::locale::classic());
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

inline std::vector<EvalRow> cmd_evaluate(const Context& ctx, const EvaluateArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("evaluate: --checkpoint is required");
  const auto r = restore(load_checkpoint(a.checkpoint));
  const auto m = open_manifest(ctx, a.manifest);
  const auto data_kernel = plan_kernel(manifest_psf(m));
  std::vector<double> snrs = a.snr_override;
  if (snrs.empty()) snrs.push_back(std::numeric_limits<double>::quiet_NaN());
  std::vector<EvalRow> rows;
  for (double snr : snrs) {
    const auto test = load_examples(m, Split::test, snr, &data_kernel);
    const auto ev = evaluate(r.pipeline, test, ctx.threads);
    rows.push_back({snr, test.size(), ev.psnr_summary(), ev.ssim_summary(), ev.inv_psnr_summary(),
                    ev.inv_ssim_summary()});
  }
  std::string csv = "snr_db,n,psnr_mean,psnr_std,ssim_mean,ssim_std,inv_psnr_mean,inv_psnr_std\n";
  *ctx.log << "  SNR [dB] |     n | PSNR [dB] (mean +- std) | SSIM (mean +- std)\n";
  for (const auto& row : rows) {
    const std::string snr = std::isnan(row.snr_db) ? "stored" : fmt(row.snr_db, 1);
    csv += snr + "," + std::to_string(row.n) + "," + fmt(row.psnr.mean, 6) + "," + fmt(row.psnr.stddev, 6) + "," +
           fmt(row.ssim.mean, 6) + "," + fmt(row.ssim.stddev, 6) + "," + fmt(row.inv_psnr.mean, 6) + "," +
           fmt(row.inv_psnr.stddev, 6) + "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%10s | %5zu | %9.3f +- %-8.3f     | %.4f +- %.4f\n", snr.c_str(), row.n,
                  row.psnr.mean, row.psnr.stddev, row.ssim.mean, row.ssim.stddev);
    *ctx.log << line;
  }
  write_text(ctx.out / "evaluate.csv", csv);
  return rows;
}

// ---------------------------------------------------------------- benchmark

struct BenchmarkRow {
  std::string method;
  bool ok = false;
  std::string error;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::size_t learnable = 0;
  double inference_ms = 0.0;
};

struct BenchmarkMethod {
  std::string name;
  Config config;
};

/// The seven rows of the comparison table, derived from one base config.
inline std::vector<BenchmarkMethod> benchmark_methods(const Config& base) {
  const int ch = base.data.shape.channels;
  const ProcessorArch pre_arch = base.pre.arch.kind == ProcessorKind::conv_stack ? base.pre.arch : default_conv_arch(ch);
  const ProcessorArch post_arch =
      base.post.arch.kind == ProcessorKind::conv_stack ? base.post.arch : default_conv_arch(ch);
  const int n = base.benchmark.unrolled_iterations;
  auto make = [&](InversionKind kind, bool pre, bool post) {
    Config c = base;
    c.inversion.kind = kind;
    c.inversion.n_iter = n;
    c.inversion_trainable = kind == InversionKind::unrolled || kind == InversionKind::tikhonov;
    c.pre = pre ? StageConfig{pre_arch, true} : StageConfig{};
    c.post = post ? StageConfig{post_arch, true} : StageConfig{};
    c.epochs = base.benchmark.epochs;
    return c;
  };
  const std::string un = "unrolled" + std::to_string(n);
  return {
      {"admm100", make(InversionKind::admm100, false, false)},
      {"tikhonov (trained eps + PSF)", make(InversionKind::tikhonov, false, false)},
      {un, make(InversionKind::unrolled, false, false)},
      {un + "+post", make(InversionKind::unrolled, false, true)},
      {"pre+" + un + "+post", make(InversionKind::unrolled, true, true)},
      {"pre+tikhonov+post", make(InversionKind::tikhonov, true, true)},
      {"pnp", make(InversionKind::pnp, false, false)},
  };
}

/// Mean single-image pipeline time over at least `count` runs, cycling
/// through the data. Excludes I/O and PSF planning.
inline double time_inference(const Pipeline<float>& p, const std::vector<Example<float>>& data, int count) {
  const std::size_t runs = std::max<std::size_t>(data.size(), static_cast<std::size_t>(count));
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < runs; ++i) p.run(data[i % data.size()].measurement);
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
         static_cast<double>(runs);
}

struct BenchmarkArgs {
  fs::path manifest;
};

inline std::vector<BenchmarkRow> cmd_benchmark(const Context& ctx, const BenchmarkArgs& a) {
  const auto m = open_manifest(ctx, a.manifest);
  const Image psf = manifest_psf(m);
  const auto train_set = load_examples(m, Split::train);
  const auto test_set = load_examples(m, Split::test);
  if (test_set.empty()) throw ConfigError("benchmark: empty test split");
  std::vector<BenchmarkRow> rows;
  for (const auto& method : benchmark_methods(ctx.config)) {
    BenchmarkRow row;
    row.method = method.name;
    try {
      auto p = build_pipeline(method.config, psf);
      if (p.trainable.any() && method.config.epochs > 0) {
        auto opt = method.config.train_options(ctx.threads);
        opt.evaluate_each_epoch = false;
        auto state = initial_train_state(p, opt);
        lensless::train<float>(p, train_set, test_set, opt, state);
      }
      const auto ev = evaluate(p, test_set, ctx.threads);
      row.psnr_db = ev.psnr_summary().mean;
      row.ssim = ev.ssim_summary().mean;
      row.learnable = p.learnable_count();
      row.inference_ms = time_inference(p, test_set, method.config.benchmark.timing_images);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    *ctx.log << (row.ok ? "done   " : "FAILED ") << row.method << (row.ok ? "" : ": " + row.error) << std::endl;
    rows.push_back(row);
  }
  std::string csv = "method,psnr_db,ssim,learnable_parameters,inference_ms\n";
  std::ostringstream table;
  table << "SSIM replaces the LPIPS column (no pretrained perceptual network); higher is better.\n";
  char line[200];
  std::snprintf(line, sizeof(line), "%-30s %10s %8s %22s %20s\n", "method", "PSNR [dB]", "SSIM",
                "# learnable parameters", "inference time [ms]");
  table << line;
  for (const auto& r : rows) {
    if (r.ok) {
      csv += "\"" + r.method + "\"," + fmt(r.psnr_db, 4) + "," + fmt(r.ssim, 4) + "," + std::to_string(r.learnable) +
             "," + fmt(r.inference_ms, 2) + "\n";
      std::snprintf(line, sizeof(line), "%-30s %10.2f %8.4f %22zu %20.2f\n", r.method.c_str(), r.psnr_db, r.ssim,
                    r.learnable, r.inference_ms);
    } else {
      csv += "\"" + r.method + "\",FAILED,FAILED,FAILED,FAILED\n";
      std::snprintf(line, sizeof(line), "%-30s %10s %8s %22s %20s\n", r.method.c_str(), "FAILED", "-", "-", "-");
    }
    table << line;
  }
  write_text(ctx.out / "benchmark.csv", csv);
  *ctx.log << table.str();
  return rows;
}

// ---------------------------------------------------------------- analyze-mismatch

struct MismatchRow {
  double perturbation = 0.0;
  double snr_db = 0.0;
  double delta_norm = 0.0;          // ||Delta_P||_F
  double w1_deviation = 0.0;        // ||W1 - I||_F
  double w2_norm = 0.0;             // ||W2||_F
  double mismatch_norm = 0.0;       // ||W2 C^T C P x||
  double noise_amplification = 0.0; // mean ||W2 C^T n|| over draws
};

inline std::vector<MismatchRow> cmd_analyze_mismatch(const Context& ctx) {
  using namespace mismatch;
  const auto& mc = ctx.config.mismatch;
  const Shape s{mc.size, mc.size, mc.channels};
  const auto psf = synth_psf<double>(ctx.config.data.psf_seed, s, mc.psf_correlation);
  const auto x = synth_scene<double>(ctx.config.data.scene_seed, s, ctx.config.data.scene_complexity);
  std::vector<MismatchRow> rows;
  for (std::size_t pi = 0; pi < mc.perturbations.size(); ++pi) {
    const double pert = mc.perturbations[pi];
    const auto model = build_dense(psf, perturb_psf(psf, pert, splitmix64(ctx.config.seed ^ (0x100 + pi))));
    const auto w = compute_w_terms(model, mc.rho_x, mc.rho_y, mc.rho_z);
    const auto y = simulate(x, model.kernel);
    const Vector zero = Vector::Zero(model.n_padded());
    const double w1_dev = (w.W1 - Matrix::Identity(model.n_padded(), model.n_padded())).norm();
    const double mis = decompose_update(model, w, x, Tensor3<double>(s), zero, zero).mismatch_term.norm();
    for (std::size_t si = 0; si < mc.snr_db.size(); ++si) {
      double amp = 0.0;
      for (int d = 0; d < mc.draws; ++d) {
        const std::uint64_t seed = splitmix64(ctx.config.seed ^ splitmix64(1000 * si + d));
        const auto noisy = add_shot_noise(y, NoiseSpec{NoiseKind::shot, mc.snr_db[si], seed});
        amp += decompose_update(model, w, x, noisy - y, zero, zero).amplified_noise_term.norm();
      }
      rows.push_back({pert, mc.snr_db[si], model.Delta_P.norm(), w1_dev, w.W2.norm(), mis, amp / mc.draws});
    }
  }
  std::ostringstream csv;
  csv.imbue(std::locale::classic());
  csv << std::setprecision(10);
  csv << "perturbation,snr_db,delta_norm,w1_deviation,w2_norm,mismatch_norm,noise_amplification_norm\n";
  for (const auto& r : rows) {
    csv << r.perturbation << "," << r.snr_db << "," << r.delta_norm << "," << r.w1_deviation << "," << r.w2_norm << ","
        << r.mismatch_norm << "," << r.noise_amplification << "\n";
  }
  write_text(ctx.out / "mismatch.csv", csv.str());
  *ctx.log << "wrote " << rows.size() << " rows to " << (ctx.out / "mismatch.csv").string() << "\n";
  return rows;
}

}  // namespace lensless::cli
