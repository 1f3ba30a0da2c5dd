#include "fpmc/estimator.hpp"

#include <algorithm>
#include <cmath>

#include "fpmc/parallel.hpp"

namespace fpmc {

namespace {

constexpr double kFlushBelow = 1e-300;

void require_positive_time(double t) {
  if (!(t > 0.0)) throw ValidationError("time must be positive, got " + std::to_string(t));
}

void require_nonnegative(const Eigen::Ref<const Vec>& v, const char* what) {
  for (Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || v[k] < 0.0) throw ValidationError(std::string(what) + " entries must be finite and nonnegative");
  }
}

}  // namespace

namespace detail {

void support_log_weights(const double* z, const SourceMeasure& nu, const double* q,
                         const std::vector<Index>* q_support, double alpha, double sigma, std::vector<double>& out) {
  const auto& support = nu.support();
  const auto& logw = nu.log_weights();
  const Batch& x = nu.dataset().images();
  const Index d = x.cols();
  const double scale = -0.5 / (sigma * sigma);
  out.resize(support.size());
  for (std::size_t s = 0; s < support.size(); ++s) {
    const double* row = x.data() + support[s] * d;
    double acc = 0.0;
    if (q_support) {
      for (Index k : *q_support) {
        const double r = alpha * row[k] - z[k];
        acc += q[k] * r * r;
      }
    } else {
      for (Index k = 0; k < d; ++k) {
        const double r = alpha * row[k] - z[k];
        acc += q[k] * r * r;
      }
    }
    out[s] = logw[s] + scale * acc;
  }
}

void softmax_inplace(std::vector<double>& a) {
  if (a.empty()) throw NumericalError("posterior over an empty support");
  const double mx = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(mx)) throw NumericalError("posterior log-weights are not finite");
  double total = 0.0;
  for (double& v : a) {
    v = std::exp(v - mx);
    total += v;
  }
  const double inv = 1.0 / total;
  for (double& v : a) {
    v *= inv;
    if (v < kFlushBelow) v = 0.0;
  }
}

std::vector<Index> nonzero_dims(const Eigen::Ref<const Vec>& v) {
  std::vector<Index> idx;
  for (Index k = 0; k < v.size(); ++k) {
    if (v[k] != 0.0) idx.push_back(k);
  }
  return idx;
}

}  // namespace detail

double filtered_log_likelihood(const Eigen::Ref<const Vec>& z, const Eigen::Ref<const Vec>& x,
                               const Eigen::Ref<const Vec>& q, double t, const DiffusionSchedule& sched) {
  require_positive_time(t);
  if (z.size() != x.size() || q.size() != x.size()) throw ValidationError("dimension mismatch in likelihood");
  const double alpha = sched.alpha(t);
  const double sigma = sched.sigma(t);
  double acc = 0.0;
  for (Index k = 0; k < x.size(); ++k) {
    const double r = alpha * x[k] - z[k];
    acc += q[k] * r * r;
  }
  return acc / (-2.0 * sigma * sigma);
}

Vec filtered_posterior(const Eigen::Ref<const Vec>& z, const Eigen::Ref<const Vec>& q, const SourceMeasure& nu,
                       double t, const DiffusionSchedule& sched) {
  require_positive_time(t);
  const Index d = nu.dataset().dims();
  if (z.size() != d || q.size() != d) throw ValidationError("dimension mismatch in posterior");
  const Vec zc = z;
  const Vec qc = q;
  std::vector<double> a;
  detail::support_log_weights(zc.data(), nu, qc.data(), nullptr, sched.alpha(t), sched.sigma(t), a);
  detail::softmax_inplace(a);
  return Eigen::Map<const Vec>(a.data(), static_cast<Index>(a.size()));
}

Batch filtered_posterior_mean(const Batch& z, double t, const Eigen::Ref<const Vec>& q, const SourceMeasure& nu,
                              const DiffusionSchedule& sched) {
  require_positive_time(t);
  const Index d = nu.dataset().dims();
  if (z.cols() != d || q.size() != d) throw ValidationError("dimension mismatch in posterior mean");
  require_nonnegative(q, "query precision");
  const Vec qc = q;
  const auto qsup = detail::nonzero_dims(qc);
  const double alpha = sched.alpha(t);
  const double sigma = sched.sigma(t);
  const Batch& x = nu.dataset().images();
  Batch out = Batch::Zero(z.rows(), d);
  parallel_for(z.rows(), [&](Index b) {
    std::vector<double> w;
    detail::support_log_weights(z.data() + b * d, nu, qc.data(), &qsup, alpha, sigma, w);
    detail::softmax_inplace(w);
    for (std::size_t s = 0; s < w.size(); ++s) {
      if (w[s] == 0.0) continue;
      out.row(b).noalias() += w[s] * x.row(nu.support()[s]);
    }
  });
  return out;
}

Vec filtered_posterior_mean(const Vec& z, double t, const Eigen::Ref<const Vec>& q,
                            const SourceMeasure& nu, const DiffusionSchedule& sched) {
  Batch zb = z.transpose();
  return filtered_posterior_mean(zb, t, q, nu, sched).row(0).transpose();
}

Batch score_from_denoiser(const Batch& z, const Batch& denoised, double t, const DiffusionSchedule& sched) {
  require_positive_time(t);
  if (z.rows() != denoised.rows() || z.cols() != denoised.cols()) throw ValidationError("score inputs differ in shape");
  const double sigma = sched.sigma(t);
  return (sched.alpha(t) * denoised - z) / (sigma * sigma);
}

FpmcModel::StepCache FpmcModel::validate(const ImageGeometry& geometry, const FpmcStep& step, std::size_t index) {
  const std::string where = "step " + std::to_string(index);
  const Index d = geometry.dims();
  const Index L = step.Q.rows();
  if (L < 1) throw ValidationError(where + ": collection has no estimators");
  if (step.Q.cols() != d || step.R.cols() != d || step.R.rows() != L) throw ValidationError(where + ": Q/R shape mismatch");
  if (step.source_of.size() != static_cast<std::size_t>(L)) throw ValidationError(where + ": source index list length mismatch");
  if (step.sources.empty()) throw ValidationError(where + ": no source measures");
  for (const auto& src : step.sources) {
    if (!(src.dataset().geometry() == geometry)) throw ValidationError(where + ": source geometry mismatch");
  }
  StepCache cache;
  cache.response_sum = Vec::Zero(d);
  for (Index l = 0; l < L; ++l) {
    if (step.source_of[static_cast<std::size_t>(l)] >= step.sources.size()) throw ValidationError(where + ": source index out of range");
    require_nonnegative(step.Q.row(l).transpose(), "query precision");
    require_nonnegative(step.R.row(l).transpose(), "response weight");
    auto qs = detail::nonzero_dims(step.Q.row(l).transpose());
    if (qs.empty()) throw ValidationError(where + ": estimator " + std::to_string(l) + " has an all-zero query precision");
    cache.q_support.push_back(std::move(qs));
    cache.r_support.push_back(detail::nonzero_dims(step.R.row(l).transpose()));
    cache.response_sum += step.R.row(l).transpose();
  }
  for (Index k = 0; k < d; ++k) {
    if (!(cache.response_sum[k] > 0.0)) {
      const auto c = geometry.unflatten(k);
      throw ValidationError(where + ": coverage violation at dimension " + std::to_string(k) + " (pixel " +
                            std::to_string(c.x) + "," + std::to_string(c.y) + " channel " + std::to_string(c.c) +
                            ") has zero total response weight");
    }
  }
  return cache;
}

FpmcModel::FpmcModel(ImageGeometry geometry, DiffusionSchedule schedule, std::vector<FpmcStep> steps)
    : geometry_(geometry), schedule_(std::move(schedule)), steps_(std::move(steps)) {
  if (steps_.size() != schedule_.num_steps()) throw ValidationError("model needs one step per schedule time");
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    const double tg = schedule_.t_grid()[i];
    if (std::abs(steps_[i].t - tg) > 1e-9 * tg) throw ValidationError("step " + std::to_string(i) + " time does not match schedule");
    cache_.push_back(validate(geometry_, steps_[i], i));
  }
}

const std::vector<Index>& FpmcModel::query_support(std::size_t step, Index l) const {
  return cache_.at(step).q_support.at(static_cast<std::size_t>(l));
}

const std::vector<Index>& FpmcModel::response_support(std::size_t step, Index l) const {
  return cache_.at(step).r_support.at(static_cast<std::size_t>(l));
}

std::size_t FpmcModel::step_for(double t) const {
  const long s = schedule_.find_step(t);
  if (s < 0) throw ValidationError("time " + std::to_string(t) + " is not on the model's schedule grid");
  return static_cast<std::size_t>(s);
}

FpmcModel FpmcModel::with_step(std::size_t i, FpmcStep replacement) const {
  std::vector<FpmcStep> steps = steps_;
  steps.at(i) = std::move(replacement);
  return FpmcModel(geometry_, schedule_, std::move(steps));
}

Batch fpmc_denoise(const Batch& z, std::size_t step_index, const FpmcModel& model) {
  const FpmcStep& step = model.step(step_index);
  const Index d = model.geometry().dims();
  if (z.cols() != d) throw ValidationError("denoiser input has wrong dimension");
  const double t = step.t;
  const double alpha = model.schedule().alpha(t);
  const double sigma = model.schedule().sigma(t);
  const Vec& rsum = model.response_sum(step_index);
  const Index L = step.size();

  Batch out(z.rows(), d);
  parallel_for(z.rows(), [&](Index b) {
    const double* zb = z.data() + b * d;
    Vec num = Vec::Zero(d);
    Vec mu = Vec::Zero(d);
    std::vector<double> w;
    for (Index l = 0; l < L; ++l) {
      const auto& rs = model.response_support(step_index, l);
      if (rs.empty()) continue;
      const SourceMeasure& nu = step.sources[step.source_of[static_cast<std::size_t>(l)]];
      detail::support_log_weights(zb, nu, step.Q.row(l).data(), &model.query_support(step_index, l), alpha, sigma, w);
      detail::softmax_inplace(w);
      const Batch& x = nu.dataset().images();
      for (Index k : rs) mu[k] = 0.0;
      for (std::size_t s = 0; s < w.size(); ++s) {
        const double ws = w[s];
        if (ws == 0.0) continue;
        const double* row = x.data() + nu.support()[s] * d;
        for (Index k : rs) mu[k] += ws * row[k];
      }
      const double* r = step.R.row(l).data();
      for (Index k : rs) num[k] += r[k] * mu[k];
    }
    out.row(b) = (num.array() / rsum.array()).transpose();
  });
  return out;
}

}  // namespace fpmc
