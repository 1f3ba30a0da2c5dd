#pragma once

#include <cstdint>
#include <vector>

#include "fpmc/denoiser.hpp"

namespace fpmc {

struct SamplerConfig {
  DiffusionSchedule schedule;
  std::uint64_t seed = 0;
  Index batch = 1;
  bool record_trajectory = false;
};

/// Prior draw z ~ N(0, T^2 I) from a seeded generator, one row per sample.
Batch sample_prior(const SamplerConfig& config, const ImageGeometry& geom);

/// dz/dt = (z - D(z, t)) / t for alpha = 1, sigma = t.
Batch ode_drift(const Batch& z, double t, const Batch& denoised);

struct SampleResult {
  Batch x;
  Batch z0;  // prior draw
  long denoiser_calls = 0;  // batched calls
  std::vector<double> trajectory_t;
  std::vector<Batch> trajectory_z;
};

/// Heun integration along the grid, then a final Euler step to t = 0.
/// Uses 2M - 1 denoiser calls for M grid times.
SampleResult heun_sample(const SamplerConfig& config, const Denoiser& denoiser, const ImageGeometry& geom);
/// Same, starting from a given prior draw.
SampleResult heun_sample_from(const Batch& z0, const DiffusionSchedule& schedule, const Denoiser& denoiser,
                              bool record_trajectory = false);

}  // namespace fpmc
