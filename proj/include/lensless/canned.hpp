#pragma once

#include <cstdint>

#include "lensless/forward_sim.hpp"

namespace lensless {

// Named fixed instances used by regression tests and the benchmark.
inline constexpr std::uint64_t kCannedPsfSeed = 7;
inline constexpr std::uint64_t kCannedSceneSeed = 1000;
inline constexpr int kCannedBenchmarkScenes = 50;  // scene seeds 1000..1049
inline constexpr int kCannedBenchmarkSize = 128;
inline constexpr double kCannedBenchmarkSnrDb = 20.0;
inline constexpr double kCannedPsfCorrelation = 2.0;
inline constexpr int kCannedSceneComplexity = 8;

template <class T = float>
struct CannedInstance {
  Tensor3<T> psf;
  Tensor3<T> scene;
  FrequencyKernel<T> kernel;
  Tensor3<T> measurement;  // noiseless unless a noise spec was given
};

/// PSF seed 7 and scene seed 1000 at size x size x 3.
template <class T = float>
CannedInstance<T> canned_instance(int size, NoiseSpec noise = {}) {
  CannedInstance<T> c;
  const Shape s{size, size, 3};
  c.psf = synth_psf<T>(kCannedPsfSeed, s, kCannedPsfCorrelation);
  c.scene = synth_scene<T>(kCannedSceneSeed, s, kCannedSceneComplexity);
  c.kernel = plan_kernel(c.psf);
  c.measurement = add_shot_noise(simulate(c.scene, c.kernel), noise);
  return c;
}

}  // namespace lensless
