#include "fpmc/classical.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fpmc/parallel.hpp"

namespace fpmc {

namespace {

void require_positive_time(double t) {
  if (!(t > 0.0)) throw ValidationError("time must be positive, got " + std::to_string(t));
}

}  // namespace

Batch optimal_denoiser(const Batch& z, double t, const Dataset& data, const DiffusionSchedule& sched) {
  require_positive_time(t);
  const Index d = data.dims();
  if (z.cols() != d) throw ValidationError("denoiser input has wrong dimension");
  const Index n = data.size();
  const double alpha = sched.alpha(t);
  const double sigma = sched.sigma(t);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  Batch out(z.rows(), d);
  parallel_for(z.rows(), [&](Index b) {
    // Squared distances, then a log-sum-exp normalized softmax.
    Vec logits(n);
    for (Index i = 0; i < n; ++i) {
      logits[i] = -(alpha * data.row(i) - z.row(b)).squaredNorm() * inv_two_var;
    }
    const double mx = logits.maxCoeff();
    if (!std::isfinite(mx)) throw NumericalError("optimal denoiser log-weights are not finite");
    Vec w = (logits.array() - mx).exp();
    w /= w.sum();
    out.row(b) = w.transpose() * data.images();
  });
  return out;
}

WienerModel fit_wiener(const Dataset& data) {
  if (data.size() < 2) throw ValidationError("Wiener fit needs at least 2 images");
  const Batch& x = data.images();
  const double n = static_cast<double>(x.rows());
  WienerModel model;
  model.mean = x.colwise().mean().transpose();
  Batch centered = x.rowwise() - model.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / n;
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
  model.eigvecs = eig.eigenvectors();
  model.eigvals = eig.eigenvalues().cwiseMax(0.0);
  return model;
}

Vec wiener_shrink_factors(const WienerModel& model, double t, const DiffusionSchedule& sched) {
  require_positive_time(t);
  const double alpha = sched.alpha(t);
  const double var = sched.sigma(t) * sched.sigma(t);
  Vec f(model.eigvals.size());
  for (Index k = 0; k < f.size(); ++k) {
    const double lam = model.eigvals[k];
    f[k] = alpha * lam / (alpha * alpha * lam + var);
  }
  return f;
}

Batch wiener_matrix(const WienerModel& model, double t, const DiffusionSchedule& sched) {
  const Vec f = wiener_shrink_factors(model, t, sched);
  Batch w = model.eigvecs * f.asDiagonal() * model.eigvecs.transpose();
  return 0.5 * (w + w.transpose());
}

Batch wiener_denoise(const Batch& z, double t, const WienerModel& model, const DiffusionSchedule& sched) {
  if (z.cols() != model.mean.size()) throw ValidationError("denoiser input has wrong dimension");
  const Vec f = wiener_shrink_factors(model, t, sched);
  const double alpha = sched.alpha(t);
  Batch centered = z.rowwise() - (alpha * model.mean).transpose();
  Batch coeffs = centered * model.eigvecs;
  coeffs = coeffs * f.asDiagonal();
  Batch out = coeffs * model.eigvecs.transpose();
  out.rowwise() += model.mean.transpose();
  return out;
}

Batch wiener_covariance(const WienerModel& model) {
  return model.eigvecs * model.eigvals.asDiagonal() * model.eigvecs.transpose();
}

}  // namespace fpmc
