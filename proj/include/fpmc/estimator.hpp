#pragma once

#include <cstddef>
#include <vector>

#include "fpmc/schedule.hpp"
#include "fpmc/source.hpp"

namespace fpmc {

/// Unnormalized Gaussian log-likelihood of z given x with per-dimension
/// precision q: (alpha x - z)^T diag(q) (alpha x - z) / (-2 sigma^2).
double filtered_log_likelihood(const Eigen::Ref<const Vec>& z, const Eigen::Ref<const Vec>& x,
                               const Eigen::Ref<const Vec>& q, double t, const DiffusionSchedule& sched);

/// Posterior weight of each support point of `nu` (see SourceMeasure::support()).
Vec filtered_posterior(const Eigen::Ref<const Vec>& z, const Eigen::Ref<const Vec>& q, const SourceMeasure& nu,
                       double t, const DiffusionSchedule& sched);

/// Posterior mean over the support of `nu`, one output row per row of `z`.
Batch filtered_posterior_mean(const Batch& z, double t, const Eigen::Ref<const Vec>& q, const SourceMeasure& nu,
                              const DiffusionSchedule& sched);
Vec filtered_posterior_mean(const Vec& z, double t, const Eigen::Ref<const Vec>& q,
                            const SourceMeasure& nu, const DiffusionSchedule& sched);

/// Tweedie: (alpha(t) * denoised - z) / sigma(t)^2.
Batch score_from_denoiser(const Batch& z, const Batch& denoised, double t, const DiffusionSchedule& sched);

/// Estimator collection for one schedule step. Row l of Q and R holds q_l
/// and r_l; estimator l averages over sources[source_of[l]].
struct FpmcStep {
  double t = 0.0;
  Batch Q;
  Batch R;
  std::vector<SourceMeasure> sources;
  std::vector<std::size_t> source_of;

  Index size() const { return Q.rows(); }
};

/// A filtered posterior mean collection over a full sampling schedule.
/// Construction validates shapes, nonnegativity, and coverage (every
/// dimension has positive total response weight) at every step.
class FpmcModel {
 public:
  FpmcModel(ImageGeometry geometry, DiffusionSchedule schedule, std::vector<FpmcStep> steps);

  const ImageGeometry& geometry() const { return geometry_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  std::size_t num_steps() const { return steps_.size(); }
  const FpmcStep& step(std::size_t i) const { return steps_.at(i); }
  const std::vector<FpmcStep>& steps() const { return steps_; }

  /// Nonzero dimensions of q_l / r_l and the elementwise response sum.
  const std::vector<Index>& query_support(std::size_t step, Index l) const;
  const std::vector<Index>& response_support(std::size_t step, Index l) const;
  const Vec& response_sum(std::size_t step) const { return cache_.at(step).response_sum; }

  /// Step index for `t`, throwing if `t` is not on the grid.
  std::size_t step_for(double t) const;

  /// Copy with step `i` replaced (same structure checks apply).
  FpmcModel with_step(std::size_t i, FpmcStep replacement) const;

 private:
  struct StepCache {
    std::vector<std::vector<Index>> q_support;
    std::vector<std::vector<Index>> r_support;
    Vec response_sum;
  };
  static StepCache validate(const ImageGeometry& geometry, const FpmcStep& step, std::size_t index);

  ImageGeometry geometry_;
  DiffusionSchedule schedule_;
  std::vector<FpmcStep> steps_;
  std::vector<StepCache> cache_;
};

/// (sum_l r_l * mu_l) / (sum_l r_l) at schedule step `step`.
Batch fpmc_denoise(const Batch& z, std::size_t step, const FpmcModel& model);

namespace detail {

/// log nu_i + filtered log-likelihood for every support point of `nu`.
/// `q_support` lists the dimensions where q is nonzero (nullptr: all).
void support_log_weights(const double* z, const SourceMeasure& nu, const double* q,
                         const std::vector<Index>* q_support, double alpha, double sigma, std::vector<double>& out);

/// Max-subtracted softmax in place; results below 1e-300 become 0.
void softmax_inplace(std::vector<double>& a);

std::vector<Index> nonzero_dims(const Eigen::Ref<const Vec>& v);

}  // namespace detail

}  // namespace fpmc
