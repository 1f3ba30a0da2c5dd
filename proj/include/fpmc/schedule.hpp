#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fpmc/types.hpp"

namespace fpmc {

/// Noise schedule z = alpha(t) x + sigma(t) eps together with the discrete
/// descending sampling grid.
class DiffusionSchedule {
 public:
  using Fn = std::function<double(double)>;

  /// alpha(t) = 1, sigma(t) = t.
  static DiffusionSchedule edm(std::vector<double> t_grid);
  /// Arbitrary alpha/sigma. Not persistable.
  static DiffusionSchedule custom(Fn alpha, Fn sigma, std::vector<double> t_grid);

  double alpha(double t) const;
  double sigma(double t) const;

  const std::vector<double>& t_grid() const { return t_grid_; }
  double t_max() const { return t_grid_.front(); }
  std::size_t num_steps() const { return t_grid_.size(); }

  /// Grid position of `t` (relative tolerance 1e-9), or -1.
  long find_step(double t) const;

  bool is_edm() const { return edm_; }

 private:
  DiffusionSchedule(Fn alpha, Fn sigma, std::vector<double> t_grid, bool edm);

  Fn alpha_;
  Fn sigma_;
  std::vector<double> t_grid_;
  bool edm_ = false;
};

/// rho-interpolated descending grid from t_max to t_min.
std::vector<double> edm_time_grid(std::size_t num_steps, double t_min, double t_max, double rho);

}  // namespace fpmc
