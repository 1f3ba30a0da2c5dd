#include "fpmc/schedule.hpp"

#include <cmath>

namespace fpmc {

DiffusionSchedule::DiffusionSchedule(Fn alpha, Fn sigma, std::vector<double> t_grid, bool edm)
    : alpha_(std::move(alpha)), sigma_(std::move(sigma)), t_grid_(std::move(t_grid)), edm_(edm) {
  if (t_grid_.empty()) throw ValidationError("schedule needs at least one time");
  for (std::size_t i = 0; i < t_grid_.size(); ++i) {
    if (!(t_grid_[i] > 0.0) || !std::isfinite(t_grid_[i])) throw ValidationError("schedule times must be positive and finite");
    if (i > 0 && !(t_grid_[i] < t_grid_[i - 1])) throw ValidationError("schedule times must be strictly decreasing");
    if (!(sigma_(t_grid_[i]) > 0.0)) throw ValidationError("sigma(t) must be positive on the grid");
  }
}

DiffusionSchedule DiffusionSchedule::edm(std::vector<double> t_grid) {
  return DiffusionSchedule([](double) { return 1.0; }, [](double t) { return t; }, std::move(t_grid), true);
}

DiffusionSchedule DiffusionSchedule::custom(Fn alpha, Fn sigma, std::vector<double> t_grid) {
  return DiffusionSchedule(std::move(alpha), std::move(sigma), std::move(t_grid), false);
}

double DiffusionSchedule::alpha(double t) const { return alpha_(t); }

double DiffusionSchedule::sigma(double t) const { return sigma_(t); }

long DiffusionSchedule::find_step(double t) const {
  for (std::size_t i = 0; i < t_grid_.size(); ++i) {
    if (std::abs(t_grid_[i] - t) <= 1e-9 * std::abs(t_grid_[i])) return static_cast<long>(i);
  }
  return -1;
}

std::vector<double> edm_time_grid(std::size_t num_steps, double t_min, double t_max, double rho) {
  if (num_steps < 2) throw ValidationError("time grid needs at least 2 steps");
  if (!(t_min > 0.0) || !(t_min < t_max) || !(rho > 0.0)) {
    throw ValidationError("time grid requires 0 < t_min < t_max and rho > 0");
  }
  const double hi = std::pow(t_max, 1.0 / rho);
  const double lo = std::pow(t_min, 1.0 / rho);
  std::vector<double> grid(num_steps);
  for (std::size_t i = 0; i < num_steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(num_steps - 1);
    grid[i] = std::pow(hi + frac * (lo - hi), rho);
  }
  grid.front() = t_max;
  grid.back() = t_min;
  return grid;
}

}  // namespace fpmc
