#pragma once

#include "fpmc/dataset.hpp"
#include "fpmc/schedule.hpp"

namespace fpmc {

/// Empirical posterior mean E[x | z, t] under the uniform distribution over
/// `data`, with the full isotropic Gaussian likelihood.
Batch optimal_denoiser(const Batch& z, double t, const Dataset& data, const DiffusionSchedule& sched);

/// Mean and eigendecomposition of the empirical covariance
///   Sigma = E[x x^T] - mean mean^T = U diag(lambda) U^T.
struct WienerModel {
  Vec mean;
  Batch eigvecs;  // d x d, orthonormal columns
  Vec eigvals;    // clamped at 0, ascending
};

WienerModel fit_wiener(const Dataset& data);

/// Per-eigenvalue factors of the Wiener matrix:
///   W_t = U diag(f) U^T,  f = alpha lambda / (alpha^2 lambda + sigma^2).
Vec wiener_shrink_factors(const WienerModel& model, double t, const DiffusionSchedule& sched);

/// Dense W_t. Avoid for large d; wiener_denoise never forms it.
Batch wiener_matrix(const WienerModel& model, double t, const DiffusionSchedule& sched);

/// mean + W_t (z - alpha mean), applied as U, diag(f), U^T.
Batch wiener_denoise(const Batch& z, double t, const WienerModel& model, const DiffusionSchedule& sched);

/// Covariance reconstructed from the decomposition.
Batch wiener_covariance(const WienerModel& model);

}  // namespace fpmc
