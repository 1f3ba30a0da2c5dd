#include "fpmc/sampler.hpp"

#include <random>

namespace fpmc {

namespace {

void require_finite(const Batch& z, double t) {
  if (!z.allFinite()) throw NumericalError("sampler state became non-finite at t=" + std::to_string(t));
}

}  // namespace

Batch sample_prior(const SamplerConfig& config, const ImageGeometry& geom) {
  if (config.batch < 1) throw ValidationError("sample count must be >= 1");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.schedule.t_max());
  Batch z(config.batch, geom.dims());
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  return z;
}

Batch ode_drift(const Batch& z, double t, const Batch& denoised) {
  if (!(t > 0.0)) throw ValidationError("drift needs t > 0");
  if (z.rows() != denoised.rows() || z.cols() != denoised.cols()) throw ValidationError("drift inputs differ in shape");
  return (z - denoised) / t;
}

SampleResult heun_sample_from(const Batch& z0, const DiffusionSchedule& schedule, const Denoiser& denoiser,
                              bool record_trajectory) {
  if (!schedule.is_edm()) throw ValidationError("the sampler needs the alpha=1, sigma=t schedule");
  const auto& grid = schedule.t_grid();
  SampleResult out;
  out.z0 = z0;
  Batch z = z0;
  auto call = [&](const Batch& zz, double t) {
    ++out.denoiser_calls;
    Batch d = denoiser.denoise(zz, t);
    if (d.rows() != zz.rows() || d.cols() != zz.cols()) throw ValidationError("denoiser returned the wrong shape");
    return d;
  };
  if (record_trajectory) {
    out.trajectory_t.push_back(grid[0]);
    out.trajectory_z.push_back(z);
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    const double t_next = i + 1 < grid.size() ? grid[i + 1] : 0.0;
    const Batch drift = ode_drift(z, t, call(z, t));
    Batch z_next = z + (t_next - t) * drift;
    if (t_next > 0.0) {
      const Batch drift_next = ode_drift(z_next, t_next, call(z_next, t_next));
      z_next = z + (t_next - t) * 0.5 * (drift + drift_next);
    }
    z = std::move(z_next);
    require_finite(z, t_next);
    if (record_trajectory) {
      out.trajectory_t.push_back(t_next);
      out.trajectory_z.push_back(z);
    }
  }
  out.x = std::move(z);
  return out;
}

SampleResult heun_sample(const SamplerConfig& config, const Denoiser& denoiser, const ImageGeometry& geom) {
  return heun_sample_from(sample_prior(config, geom), config.schedule, denoiser, config.record_trajectory);
}

}  // namespace fpmc
