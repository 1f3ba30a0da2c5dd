#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpmc/classical.hpp"
#include "fpmc/estimator.hpp"

namespace fpmc {

/// Per-step hyperparameter: a patch size s(t) or a threshold tau(t).
struct ScheduleEntry {
  std::size_t step = 0;
  double t = 0.0;  // informational; <= 0 means unspecified
  double value = 0.0;
};

class ScheduleTable {
 public:
  enum class Kind { PatchSize, Threshold };

  ScheduleTable() = default;
  ScheduleTable(Kind kind, std::vector<ScheduleEntry> entries);

  /// Same value at every time of `t_grid`.
  static ScheduleTable constant(Kind kind, const std::vector<double>& t_grid, double value);
  /// Reference schedules: dataset in {cifar10, ffhq64, afhq64}, method in
  /// {pspc-square, ls, els, pspc-flex, lukoianov}. Times come from the
  /// matching EDM grid (18 or 40 steps).
  static ScheduleTable builtin(const std::string& dataset, const std::string& method);

  Kind kind() const { return kind_; }
  const std::vector<ScheduleEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  int patch_size(std::size_t step) const;
  double tau(std::size_t step) const;

  /// Checks one entry per grid step and, where given, that tabulated times
  /// agree with the grid to the printed precision (1% or 1e-3 absolute).
  void check_against(const std::vector<double>& t_grid) const;

  nlohmann::json to_json() const;
  /// Accepts a JSON list of {step, t, s} or {step, t, tau}.
  static ScheduleTable from_json(const nlohmann::json& j);
  static ScheduleTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  Kind kind_ = Kind::PatchSize;
  std::vector<ScheduleEntry> entries_;
};

/// Binary mask of the s x s square centred at (x, y), clipped to the image,
/// all channels set. s must be odd.
Vec square_patch_indicator(Index x, Index y, Index s, const ImageGeometry& geom);

/// Mask of the s x s window whose upper-left pixel is (x0, y0); any s >= 1.
Vec square_window(Index x0, Index y0, Index s, const ImageGeometry& geom);

/// Centres of the s x s patches that fit inside the image, y-major order.
/// s of 0 or 1 gives every pixel.
std::vector<std::pair<Index, Index>> interior_centers(Index s, const ImageGeometry& geom);

/// Shift list (i, j) of the translation set used by the equivariant local
/// model for output pixel (x, y) and patch size s. (T_ij x)(u, v) = x(u+i, v+j)
/// with zeros outside the frame.
std::vector<std::pair<Index, Index>> els_translations(Index x, Index y, Index s, const ImageGeometry& geom);

/// Every image of `data` translated by every shift in `shifts`, shift-major.
/// Rows keep the base image index as their origin.
Dataset translate_dataset(const Dataset& data, const std::vector<std::pair<Index, Index>>& shifts);

/// If `clamp` is set, patch sizes larger than the image are reduced to
/// min(W, H); otherwise they are an error.
FpmcModel build_pspc_square(const ScheduleTable& sizes, DatasetPtr data, const DiffusionSchedule& sched,
                            bool clamp = false);
FpmcModel build_ls(const ScheduleTable& sizes, DatasetPtr data, const DiffusionSchedule& sched);
FpmcModel build_els(const ScheduleTable& sizes, DatasetPtr data, const DiffusionSchedule& sched);

/// Pixels sorted by channel-averaged value (descending, ties by ascending
/// pixel index); the shortest prefix reaching tau * total is selected and
/// every channel of a selected pixel is set.
Vec cumulative_threshold_mask(const Eigen::Ref<const Vec>& map, double tau, const ImageGeometry& geom);

/// Nonnegative importance map per (step, output pixel), each of length d.
class SensitivityMap {
 public:
  SensitivityMap(ImageGeometry geometry, std::vector<double> t, Batch maps);

  const ImageGeometry& geometry() const { return geometry_; }
  std::size_t num_steps() const { return t_.size(); }
  const std::vector<double>& times() const { return t_; }
  auto map(std::size_t step, Index x, Index y) const {
    return maps_.row((static_cast<Index>(step) * geometry_.height + y) * geometry_.width + x);
  }
  const Batch& data() const { return maps_; }

  void save(const std::filesystem::path& path) const;
  static SensitivityMap load(const std::filesystem::path& path);

 private:
  ImageGeometry geometry_;
  std::vector<double> t_;
  Batch maps_;  // (steps * H * W) x d
};

/// Isotropic Gaussian bumps centred on each output pixel, with a width that
/// grows geometrically from `min_width` at the smallest t to `max_width`
/// (default: max(W, H)) at the largest.
SensitivityMap synthetic_bump_maps(const ImageGeometry& geom, const std::vector<double>& t_grid,
                                   double min_width = 0.5, double max_width = 0.0);

struct FlexReport {
  /// (step, pixel index) pairs whose mask excludes the pixel itself.
  std::vector<std::pair<std::size_t, Index>> missing_self;
};

FpmcModel build_pspc_flex(const SensitivityMap& maps, const ScheduleTable& taus, DatasetPtr data,
                          const DiffusionSchedule& sched, FlexReport* report = nullptr);

/// Thresholded, row-max-rescaled rows of the Wiener matrix at time t.
Batch lukoianov_masks(const WienerModel& wiener, double tau, double t, const DiffusionSchedule& sched);

FpmcModel build_lukoianov(const WienerModel& wiener, double tau, DatasetPtr data, const DiffusionSchedule& sched);

/// One estimator with q = r = 1 at every step: the optimal denoiser as an FPMC.
FpmcModel build_full_image(DatasetPtr data, const DiffusionSchedule& sched);

}  // namespace fpmc
