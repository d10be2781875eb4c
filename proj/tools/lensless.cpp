#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lensless/commands.hpp"
#include "lensless/runtime.hpp"

using namespace lensless;

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Lensless camera reconstruction toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the config's top-level seed");
  app.add_option("--config", config_path, "Config file (sectioned key = value)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads (default: $LENSLESS_THREADS, else 1)")->check(CLI::NonNegativeNumber);

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset and manifest");

  cli::TrainArgs train_args;
  std::string resume, train_manifest;
  auto* train = app.add_subcommand("train", "Train the configured pipeline");
  train->add_option("--manifest", train_manifest, "Dataset manifest (default: [data] manifest)");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--epochs", train_args.epochs, "Override [train] epochs")->check(CLI::PositiveNumber);
  train->add_option("--alpha", train_args.alpha, "Override the auxiliary loss weight (e.g. 0, 0.01, 0.03, 0.1)");

  cli::ReconstructArgs rec_args;
  std::string rec_ckpt, rec_psf, rec_meas, rec_output, rec_ref;
  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct one measurement");
  reconstruct->add_option("--checkpoint", rec_ckpt, "Trained checkpoint (otherwise the config builds the pipeline)");
  reconstruct->add_option("--psf", rec_psf, "PSF file for the config route");
  reconstruct->add_option("--measurement", rec_meas, "Measurement (.ltnsr or .png)")->required();
  reconstruct->add_option("--output", rec_output, "Output image (default: <out>/reconstruction.png)");
  reconstruct->add_option("--reference", rec_ref, "Ground truth for a PSNR/SSIM printout");
  reconstruct->add_flag("--dump-intermediates", rec_args.dump_intermediates,
                        "Also write 01_pre.png, 02_inv.png and 03_post.png");

  cli::EvaluateArgs eval_args;
  std::string eval_ckpt, eval_manifest;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
  evaluate->add_option("--manifest", eval_manifest, "Dataset manifest (default: [data] manifest)");
  evaluate->add_option("--snr-override", eval_args.snr_override, "Re-noise test measurements at these SNRs [dB]")
      ->delimiter(',');

  std::string bench_manifest;
  auto* benchmark = app.add_subcommand("benchmark", "Compare inversion methods and pipelines");
  benchmark->add_option("--manifest", bench_manifest, "Dataset manifest (default: [data] manifest)");

  auto* mismatch = app.add_subcommand("analyze-mismatch", "Model-mismatch and noise-amplification terms as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cli::Context ctx;
    if (!config_path.empty()) ctx.config = load_config(config_path);
    if (*seed_opt) ctx.config.seed = seed;
    ctx.out = out_dir;
    ctx.threads = resolve_threads(threads);

    if (*simulate) {
      cli::cmd_simulate(ctx);
    } else if (*train) {
      train_args.manifest = train_manifest;
      train_args.resume = resume;
      const auto r = cli::cmd_train(ctx, train_args);
      std::cout << "checkpoint " << r.checkpoint.string() << "\n";
    } else if (*reconstruct) {
      rec_args.checkpoint = rec_ckpt;
      rec_args.psf = rec_psf;
      rec_args.measurement = rec_meas;
      rec_args.output = rec_output;
      rec_args.reference = rec_ref;
      cli::cmd_reconstruct(ctx, rec_args);
    } else if (*evaluate) {
      eval_args.checkpoint = eval_ckpt;
      eval_args.manifest = eval_manifest;
      cli::cmd_evaluate(ctx, eval_args);
    } else if (*benchmark) {
      cli::cmd_benchmark(ctx, cli::BenchmarkArgs{bench_manifest});
    } else if (*mismatch) {
      cli::cmd_analyze_mismatch(ctx);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
