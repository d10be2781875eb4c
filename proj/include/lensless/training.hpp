#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <type_traits>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lensless/adam.hpp"
#include "lensless/dataset.hpp"
#include "lensless/losses.hpp"
#include "lensless/metrics.hpp"
#include "lensless/parallel.hpp"
#include "lensless/pipeline.hpp"

namespace lensless {

inline constexpr int kDefaultEpochs = 25;
inline constexpr int kDefaultBatchSize = 8;

template <class T = float>
struct Example {
  Tensor3<T> measurement;
  Tensor3<T> scene;
};

/// Loads one split. With `snr_override_db` set, measurements are re-noised
/// from the stored scenes at that SNR (same per-record noise seeds).
inline std::vector<Example<float>> load_examples(const DatasetManifest& m, Split split,
                                                 double snr_override_db = std::numeric_limits<double>::quiet_NaN(),
                                                 const FrequencyKernel<float>* kernel = nullptr) {
  std::vector<Example<float>> out;
  for (const auto* r : m.split(split)) {
    Example<float> e;
    e.scene = load_tensor(m.resolve(r->scene_path));
    if (std::isnan(snr_override_db)) {
      e.measurement = load_tensor(m.resolve(r->measurement_path));
    } else {
      if (!kernel) throw ConfigError("load_examples: SNR override needs the dataset kernel");
      e.measurement = replay_measurement(m, *r, *kernel, snr_override_db);
    }
    out.push_back(std::move(e));
  }
  return out;
}

template <class T>
struct BatchResult {
  double loss = 0.0;
  std::vector<T> grad;
};

/// Loss and gradient of one example.
template <class T>
BatchResult<T> example_gradient(const Pipeline<T>& p, const Example<T>& e, const LossWeights& w) {
  PipelineTape<T> tape;
  const auto out = p.run(e.measurement, &tape);
  Tensor3<T> g_post, g_inv;
  BatchResult<T> r;
  r.loss = loss_with_aux(e.scene, out.post, out.inv, w, &g_post, &g_inv);
  r.grad = p.backward(tape, g_post, g_inv);
  return r;
}

/// Mean loss and mean gradient over the selected examples. Per-example
/// results are reduced in index order, so the outcome does not depend on
/// the worker count.
template <class T>
BatchResult<T> batch_gradient(const Pipeline<T>& p, const std::vector<Example<T>>& data,
                              const std::vector<std::size_t>& indices, const LossWeights& w, int threads = 1) {
  std::vector<BatchResult<T>> per(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) { per[i] = example_gradient(p, data[indices[i]], w); });
  std::vector<double> acc(p.param_count(), 0.0);
  BatchResult<T> out;
  for (const auto& r : per) {
    out.loss += r.loss;
    for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += r.grad[n];
  }
  const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(indices.size(), 1));
  out.loss *= inv;
  out.grad.resize(acc.size());
  for (std::size_t n = 0; n < acc.size(); ++n) out.grad[n] = static_cast<T>(acc[n] * inv);
  return out;
}

/// Deterministic permutation of [0, n) for one epoch.
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::uint64_t state = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 0x5eed));
  for (std::size_t i = n; i > 1; --i) {
    state = splitmix64(state);
    std::swap(idx[i - 1], idx[state % i]);
  }
  return idx;
}

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  return s;
}

struct EvalReport {
  std::vector<double> psnr, ssim;          // final output
  std::vector<double> inv_psnr, inv_ssim;  // camera-inversion output
  double ms_per_image = 0.0;

  MetricSummary psnr_summary() const { return summarize(psnr); }
  MetricSummary ssim_summary() const { return summarize(ssim); }
  MetricSummary inv_psnr_summary() const { return summarize(inv_psnr); }
  MetricSummary inv_ssim_summary() const { return summarize(inv_ssim); }
};

template <class T>
EvalReport evaluate(const Pipeline<T>& p, const std::vector<Example<T>>& data, int threads = 1) {
  if (data.empty()) throw ConfigError("evaluate: empty test split");
  EvalReport r;
  r.psnr.resize(data.size());
  r.ssim.resize(data.size());
  r.inv_psnr.resize(data.size());
  r.inv_ssim.resize(data.size());
  std::vector<double> ms(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = p.run(data[i].measurement);
    ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const auto f = evaluate_metrics(data[i].scene, out.post);
    const auto v = evaluate_metrics(data[i].scene, out.inv);
    r.psnr[i] = f.psnr_db;
    r.ssim[i] = f.ssim;
    r.inv_psnr[i] = v.psnr_db;
    r.inv_ssim[i] = v.ssim;
  });
  r.ms_per_image = summarize(ms).mean;
  return r;
}

struct TrainOptions {
  int epochs = kDefaultEpochs;
  int batch_size = kDefaultBatchSize;
  AdamConfig adam;
  double inversion_lr = 0.0;  // step size for the inversion block; 0 uses adam.lr
  LossWeights loss;
  std::uint64_t seed = 0;
  int threads = 1;
  bool evaluate_each_epoch = true;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_psnr = 0.0;
  double test_ssim = 0.0;
  double wall_s = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"train_loss", train_loss}, {"test_psnr", test_psnr}, {"test_ssim", test_ssim},
            {"wall_s", wall_s}};
  }
  static EpochRecord from_json(const nlohmann::json& j) {
    return EpochRecord{j.at("epoch").get<int>(), j.at("train_loss").get<double>(), j.at("test_psnr").get<double>(),
                       j.at("test_ssim").get<double>(), j.at("wall_s").get<double>()};
  }
};

/// Optimizer state plus progress; enough to resume exactly.
struct TrainState {
  AdamState adam;
  int epochs_done = 0;
  std::vector<EpochRecord> history;
};

template <class T>
TrainState initial_train_state(const Pipeline<T>& p, const TrainOptions& o) {
  TrainState s;
  s.adam = AdamState::init(p.param_count(), o.adam);
  if (o.inversion_lr < 0.0 || !std::isfinite(o.inversion_lr)) throw ConfigError("inversion_lr must be >= 0");
  if (o.inversion_lr > 0.0 && o.inversion_lr != o.adam.lr && p.trainable.inversion) {
    // Softplus-parametrized solver hyperparameters move on a log scale and
    // need much larger steps than conv weights.
    s.adam.lr_scale.assign(p.param_count(), 1.0);
    const std::size_t begin = p.trainable.pre ? p.pre.values.size() : 0;
    for (std::size_t n = 0; n < p.inversion_param_count(); ++n) s.adam.lr_scale[begin + n] = o.inversion_lr / o.adam.lr;
  }
  return s;
}

/// Runs epochs state.epochs_done + 1 .. o.epochs. `on_epoch` is called after
/// every epoch (checkpointing, logging).
template <class T>
void train(Pipeline<T>& p, const std::vector<Example<T>>& train_set, const std::vector<Example<T>>& test_set,
           const TrainOptions& o, TrainState& state,
           const std::type_identity_t<std::function<void(const Pipeline<T>&, const TrainState&)>>& on_epoch = {}) {
  if (train_set.empty()) throw ConfigError("train: empty training split");
  if (o.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!p.trainable.any() || p.param_count() == 0) throw ConfigError("train: no trainable block selected");
  validate(o.loss);
  if (state.adam.m.size() != p.param_count()) throw ShapeError("train: optimizer state does not match the pipeline");
  const std::size_t n = train_set.size();
  for (int epoch = state.epochs_done + 1; epoch <= o.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto perm = epoch_permutation(n, o.seed, epoch);
    double loss_sum = 0.0;
    int batch = 0;
    for (std::size_t start = 0; start < n; start += o.batch_size, ++batch) {
      const std::vector<std::size_t> idx(perm.begin() + start, perm.begin() + std::min(n, start + o.batch_size));
      auto r = batch_gradient(p, train_set, idx, o.loss, o.threads);
      bool finite = std::isfinite(r.loss);
      for (T g : r.grad) finite = finite && std::isfinite(static_cast<double>(g));
      if (!finite) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch),
                             epoch);
      }
      loss_sum += r.loss * static_cast<double>(idx.size());
      auto params = p.params();
      adam_step(state.adam, std::span<T>(params), std::span<const T>(r.grad));
      p.set_params(params);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    if (o.evaluate_each_epoch && !test_set.empty()) {
      const auto ev = evaluate(p, test_set, o.threads);
      rec.test_psnr = ev.psnr_summary().mean;
      rec.test_ssim = ev.ssim_summary().mean;
    }
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(rec);
    state.epochs_done = epoch;
    if (on_epoch) on_epoch(p, state);
  }
}

}  // namespace lensless
