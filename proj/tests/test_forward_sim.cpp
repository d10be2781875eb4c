#include <cmath>
#include <set>

#include "lensless/dataset.hpp"
#include "lensless/forward_sim.hpp"
#include "test_support.hpp"

using namespace lensless;
using namespace lensless::testing;

namespace {

// Lag (pixels, along width, channel 0) where the normalized autocorrelation
// of the mean-removed PSF first drops below one half.
double autocorr_half_width(const Image& psf) {
  const int h = psf.height(), w = psf.width();
  const double mean = channel_sum(psf, 0) / (h * w);
  auto ac = [&](int lag) {
    double acc = 0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) acc += (psf(i, j, 0) - mean) * (psf(i, (j + lag) % w, 0) - mean);
    return acc;
  };
  const double a0 = ac(0);
  double prev = 1.0;
  for (int lag = 1; lag < w / 2; ++lag) {
    const double r = ac(lag) / a0;
    if (r < 0.5) return lag - 1 + (prev - 0.5) / (prev - r);
    prev = r;
  }
  return w / 2;
}

}  // namespace

TEST(SynthPsf, DeterministicAndNormalized) {
  const Shape s{32, 32, 3};
  const Image a = synth_psf(3, s, 2.0), b = synth_psf(3, s, 2.0), c = synth_psf(4, s, 2.0);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(channel_sum(a, k), 1.0, 1e-6);
  for (float v : a.values()) EXPECT_GE(v, 0.0f);
  EXPECT_THROW(synth_psf(1, s, 0.5), ConfigError);
  EXPECT_THROW(synth_psf(1, Shape{0, 4, 1}, 2.0), ShapeError);
}

TEST(SynthPsf, CorrelationLengthIsMonotone) {
  const Shape s{64, 64, 1};
  for (std::uint64_t seed : {1, 2, 3}) {
    double prev = 0.0;
    for (double corr : {1.0, 2.0, 4.0, 8.0}) {
      const double hw = autocorr_half_width(synth_psf(seed, s, corr));
      EXPECT_GT(hw, prev) << "seed " << seed << " corr " << corr;
      prev = hw;
    }
  }
}

TEST(SynthScene, RangeAndDeterminism) {
  const Shape s{32, 32, 3};
  EXPECT_EQ(max_value(synth_scene(5, s, 0)), 0.0f);
  EXPECT_TRUE(synth_scene(5, s, 8) == synth_scene(5, s, 8));
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Image x = synth_scene(seed, s, 8);
    for (float v : x.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    mean += sum(x) / x.size();
  }
  mean /= 1000;
  EXPECT_GT(mean, 0.05);
  EXPECT_LT(mean, 0.8);
}

TEST(Simulate, ZeroDeltaAndDense) {
  const Shape s{8, 8, 3};
  const auto kd = plan_kernel(delta_psf(s));
  const Image x = synth_scene(1, s, 8);
  EXPECT_LE(max_abs_diff(simulate(x, kd), x), 1e-6);
  const Image psf = synth_psf(7, s, 1.5);
  const auto k = plan_kernel(psf);
  EXPECT_EQ(max_value(simulate(Image(s), k)), 0.0f);
  const Image y = simulate(x, k);
  const auto dense = dense_forward(psf, x);
  Tensor3<double> want(s);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int c = 0; c < 3; ++c) want(i, j, c) = dense(i + 4, j + 4, c);
  EXPECT_LE(max_abs_diff(y, want), 1e-5 * max_value(want));
  for (float v : y.values()) EXPECT_GE(v, -1e-7f);
}

TEST(ShotNoise, NoneIsIdentityAndNegativeRejected) {
  const Image y = random_tensor(Shape{4, 4, 1}, 1);
  EXPECT_TRUE(add_shot_noise(y, NoiseSpec{NoiseKind::none, 20, 1}) == y);
  Image bad = y;
  bad[0] = -0.1f;
  EXPECT_THROW(add_shot_noise(bad, NoiseSpec{NoiseKind::shot, 20, 1}), ConfigError);
  EXPECT_THROW(add_shot_noise(Image(4, 4, 1), NoiseSpec{NoiseKind::shot, 20, 1}), ConfigError);
}

TEST(ShotNoise, EmpiricalSnrHitsTarget) {
  const Shape s{64, 64, 1};
  const Image y = simulate(synth_scene(2, s, 8), plan_kernel(synth_psf(7, s, 2.0)));
  const double gamma = shot_noise_gain(y, 20.0);
  double snr = 0, snr2 = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    snr += empirical_snr_db(y, add_shot_noise(y, NoiseSpec{NoiseKind::shot, 20.0, seed}));
    snr2 += empirical_snr_db(y, add_shot_noise(y, NoiseSpec{NoiseKind::shot, 20.0, seed}, 2 * gamma));
  }
  EXPECT_NEAR(snr / 100, 20.0, 0.5);
  EXPECT_NEAR(snr2 / 100 - snr / 100, 10 * std::log10(2.0), 0.3);
}

TEST(ShotNoise, UnbiasedAndNonNegative) {
  const Image y = random_tensor(Shape{4, 4, 1}, 3, 0.1, 1.0);
  const int draws = 4000;
  const double gamma = shot_noise_gain(y, 10.0);
  std::vector<double> mean(y.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    const Image z = add_shot_noise(y, NoiseSpec{NoiseKind::shot, 10.0, static_cast<std::uint64_t>(d)});
    for (std::size_t n = 0; n < y.size(); ++n) {
      ASSERT_GE(z[n], 0.0f);
      mean[n] += z[n];
    }
  }
  for (std::size_t n = 0; n < y.size(); ++n) {
    const double m = mean[n] / draws;
    const double se = std::sqrt(y[n] / gamma / draws);
    EXPECT_LE(std::abs(m - y[n]), 3.5 * se) << n;
  }
}

TEST(Dataset, CountsSplitsAndReplay) {
  TempDir dir("ds");
  DatasetConfig c;
  c.out_dir = dir.path();
  c.shape = Shape{16, 16, 3};
  c.n_train = 20;
  c.n_test = 5;
  const auto m = gen_dataset(c);
  EXPECT_EQ(m.records.size(), 25u);
  std::set<std::uint64_t> train, test;
  for (const auto* r : m.split(Split::train)) train.insert(r->seed);
  for (const auto* r : m.split(Split::test)) test.insert(r->seed);
  EXPECT_EQ(train.size(), 20u);
  EXPECT_EQ(test.size(), 5u);
  for (auto s : test) EXPECT_EQ(train.count(s), 0u);

  const auto read = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(read.records.size(), 25u);
  const auto kernel = plan_kernel(load_tensor(read.resolve(read.psf_path)));
  for (const auto& r : read.records) {
    EXPECT_TRUE(replay_measurement(read, r, kernel) == load_tensor(read.resolve(r.measurement_path)));
  }
}

TEST(Dataset, RegenerationIsByteIdenticalAcrossThreadCounts) {
  TempDir a("ds"), b("ds");
  DatasetConfig c;
  c.shape = Shape{16, 16, 3};
  c.n_train = 6;
  c.n_test = 3;
  c.out_dir = a.path();
  c.threads = 1;
  const auto ma = gen_dataset(c);
  c.out_dir = b.path();
  c.threads = 3;
  gen_dataset(c);
  for (const auto& r : ma.records) {
    EXPECT_EQ(read_file_bytes(a / r.measurement_path), read_file_bytes(b / r.measurement_path));
    EXPECT_EQ(read_file_bytes(a / r.scene_path), read_file_bytes(b / r.scene_path));
  }
  EXPECT_EQ(read_file_bytes(a / "psf.ltnsr"), read_file_bytes(b / "psf.ltnsr"));
  EXPECT_EQ(read_file_bytes(a / "manifest.jsonl"), read_file_bytes(b / "manifest.jsonl"));
}

TEST(Dataset, MalformedManifestIsFormatError) {
  TempDir dir("ds");
  write_file_bytes(dir / "m.jsonl", "{\"kind\":\"header\",\"psf_path\":\"p\"}\n{not json\n");
  EXPECT_THROW(read_manifest(dir / "m.jsonl"), FormatError);
  write_file_bytes(dir / "n.jsonl", "{\"kind\":\"record\"}\n");
  EXPECT_THROW(read_manifest(dir / "n.jsonl"), FormatError);
}
