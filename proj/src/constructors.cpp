#include "fpmc/constructors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "fpmc/parallel.hpp"

namespace fpmc {

namespace {

// Reference schedules, one value per grid step.
const std::vector<double> kCifarSquare = {32, 32, 32, 32, 32, 32, 32, 23, 15, 11, 7, 5, 3, 3, 3, 3, 3, 3};
const std::vector<double> kCifarLs = {31, 31, 31, 31, 31, 31, 29, 25, 15, 11, 7, 5, 3, 3, 3, 3, 3, 3};
const std::vector<double> kCifarEls = {31, 31, 31, 31, 31, 31, 31, 27, 19, 15, 9, 7, 5, 3, 3, 3, 3, 3};
const std::vector<double> kCifarFlex = {1, 1, 1, 1, 1, 1, 1, 0.7, 0.7, 0.5, 0.4, 0.4, 0.4, 0.4, 0.3, 0.3, 0.3, 0.3};

const std::vector<double> kFfhqSquare = {64, 64, 64, 64, 64, 64, 64, 64, 64, 64, 64, 64, 43, 43,
                                         43, 35, 35, 27, 23, 19, 15, 15, 11, 9,  9,  7,  5,  5,
                                         3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3};
const std::vector<double> kFfhqLs = {63, 63, 63, 63, 63, 63, 63, 63, 63, 63, 63, 55, 51, 45, 39, 35, 31, 29, 25, 21,
                                     17, 15, 11, 7,  7,  7,  7,  5,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3};
const std::vector<double> kFfhqFlex = {1,    1,   1,   1,    1,   1,   1,   1,   1,   1,   1,   0.8, 0.7, 0.6,
                                       0.6,  0.6, 0.6, 0.55, 0.5, 0.45, 0.4, 0.4, 0.4, 0.35, 0.3, 0.3, 0.3, 0.3,
                                       0.3,  0.3, 0.3, 0.3,  0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3};

const std::vector<double> kAfhqSquare = {64, 64, 64, 64, 64, 64, 64, 64, 64, 64, 64, 51, 43, 43,
                                         35, 27, 23, 19, 15, 15, 15, 9,  9,  9,  7,  5,  5,  3,
                                         3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3};
const std::vector<double> kAfhqLs = {63, 63, 63, 63, 63, 55, 63, 63, 63, 63, 63, 55, 51, 45, 37, 31, 23, 21, 17, 15,
                                     13, 11, 9,  7,  5,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3,  3};
const std::vector<double> kAfhqFlex = {1,   1,   1,   1,   1,   1,   1,   1,   1,   0.85, 0.7, 0.65, 0.6, 0.6,
                                       0.6, 0.55, 0.5, 0.45, 0.4, 0.35, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3,  0.3, 0.3,
                                       0.3, 0.3, 0.3, 0.3,  0.3, 0.3, 0.3, 0.3,  0.3, 0.3, 0.3, 0.3};

ScheduleTable from_values(ScheduleTable::Kind kind, const std::vector<double>& grid, const std::vector<double>& v) {
  std::vector<ScheduleEntry> entries;
  for (std::size_t i = 0; i < grid.size(); ++i) entries.push_back({i, grid[i], v.at(i)});
  return ScheduleTable(kind, std::move(entries));
}

void require_table_fits(const ScheduleTable& table, const DiffusionSchedule& sched, ScheduleTable::Kind kind) {
  if (table.kind() != kind) {
    throw ValidationError(kind == ScheduleTable::Kind::PatchSize ? "expected a patch-size schedule table"
                                                                 : "expected a threshold schedule table");
  }
  table.check_against(sched.t_grid());
}

SourceMeasure uniform_source(const DatasetPtr& data) {
  if (!data) throw ValidationError("constructor needs a dataset");
  return SourceMeasure::uniform(data);
}

FpmcStep shared_source_step(double t, Batch Q, Batch R, const SourceMeasure& nu) {
  FpmcStep step;
  step.t = t;
  step.source_of.assign(static_cast<std::size_t>(Q.rows()), 0);
  step.Q = std::move(Q);
  step.R = std::move(R);
  step.sources.push_back(nu);
  return step;
}

Vec pixel_indicator(Index x, Index y, const ImageGeometry& geom) {
  Vec v = Vec::Zero(geom.dims());
  for (Index c = 0; c < geom.channels; ++c) v[geom.flat(x, y, c)] = 1.0;
  return v;
}

}  // namespace

ScheduleTable::ScheduleTable(Kind kind, std::vector<ScheduleEntry> entries) : kind_(kind), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.step != i) throw ValidationError("schedule table steps must be 0..M-1 without gaps");
    if (kind_ == Kind::PatchSize) {
      if (e.value < 1.0 || e.value != std::floor(e.value)) {
        throw ValidationError("patch size at step " + std::to_string(i) + " must be a positive integer");
      }
    } else if (!(e.value > 0.0 && e.value <= 1.0)) {
      throw ValidationError("threshold at step " + std::to_string(i) + " must lie in (0, 1]");
    }
  }
}

ScheduleTable ScheduleTable::constant(Kind kind, const std::vector<double>& t_grid, double value) {
  return from_values(kind, t_grid, std::vector<double>(t_grid.size(), value));
}

ScheduleTable ScheduleTable::builtin(const std::string& dataset, const std::string& method) {
  const bool cifar = dataset == "cifar10";
  if (!cifar && dataset != "ffhq64" && dataset != "afhq64") throw ValidationError("unknown reference dataset: " + dataset);
  const auto grid = edm_time_grid(cifar ? 18 : 40, 0.002, 80.0, 7.0);
  const bool ffhq = dataset == "ffhq64";
  if (method == "pspc-square") return from_values(Kind::PatchSize, grid, cifar ? kCifarSquare : ffhq ? kFfhqSquare : kAfhqSquare);
  if (method == "ls") return from_values(Kind::PatchSize, grid, cifar ? kCifarLs : ffhq ? kFfhqLs : kAfhqLs);
  if (method == "els") {
    if (!cifar) throw ValidationError("no reference ELS schedule for " + dataset);
    return from_values(Kind::PatchSize, grid, kCifarEls);
  }
  if (method == "pspc-flex") return from_values(Kind::Threshold, grid, cifar ? kCifarFlex : ffhq ? kFfhqFlex : kAfhqFlex);
  if (method == "lukoianov") return constant(Kind::Threshold, grid, cifar ? 0.05 : 0.02);
  throw ValidationError("no reference schedule for method " + method);
}

int ScheduleTable::patch_size(std::size_t step) const {
  if (kind_ != Kind::PatchSize) throw ValidationError("schedule table holds thresholds, not patch sizes");
  return static_cast<int>(entries_.at(step).value);
}

double ScheduleTable::tau(std::size_t step) const {
  if (kind_ != Kind::Threshold) throw ValidationError("schedule table holds patch sizes, not thresholds");
  return entries_.at(step).value;
}

void ScheduleTable::check_against(const std::vector<double>& t_grid) const {
  if (entries_.size() != t_grid.size()) {
    throw ValidationError("schedule table has " + std::to_string(entries_.size()) + " steps but the grid has " +
                          std::to_string(t_grid.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const double t = entries_[i].t;
    if (t <= 0.0) continue;
    if (std::abs(t - t_grid[i]) > std::max(1e-3, 1e-2 * t_grid[i])) {
      throw ValidationError("schedule table time " + std::to_string(t) + " at step " + std::to_string(i) +
                            " does not match grid time " + std::to_string(t_grid[i]));
    }
  }
}

nlohmann::json ScheduleTable::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  const char* key = kind_ == Kind::PatchSize ? "s" : "tau";
  for (const auto& e : entries_) {
    nlohmann::json row = {{"step", e.step}, {"t", e.t}};
    if (kind_ == Kind::PatchSize) {
      row[key] = static_cast<int>(e.value);
    } else {
      row[key] = e.value;
    }
    list.push_back(row);
  }
  return list;
}

ScheduleTable ScheduleTable::from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ValidationError("schedule table must be a non-empty JSON list");
  const bool patch = j[0].contains("s");
  std::vector<ScheduleEntry> entries;
  for (const auto& row : j) {
    if (!row.contains("step")) throw ValidationError("schedule table row lacks 'step'");
    if (patch != row.contains("s") || patch == row.contains("tau")) {
      throw ValidationError("schedule table rows must all carry exactly one of 's' or 'tau'");
    }
    ScheduleEntry e;
    e.step = row["step"].get<std::size_t>();
    e.t = row.contains("t") && !row["t"].is_null() ? row["t"].get<double>() : 0.0;
    e.value = patch ? row["s"].get<double>() : row["tau"].get<double>();
    entries.push_back(e);
  }
  return ScheduleTable(patch ? Kind::PatchSize : Kind::Threshold, std::move(entries));
}

ScheduleTable ScheduleTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read schedule table " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed schedule table " + path.string() + ": " + e.what());
  }
}

void ScheduleTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

Vec square_patch_indicator(Index x, Index y, Index s, const ImageGeometry& geom) {
  if (x < 0 || x >= geom.width || y < 0 || y >= geom.height) throw ValidationError("patch centre outside the image");
  if (s < 1 || s % 2 == 0) throw ValidationError("square patch size must be odd and >= 1, got " + std::to_string(s));
  const Index k = s / 2;
  Vec v = Vec::Zero(geom.dims());
  for (Index j = std::max<Index>(0, y - k); j <= std::min(geom.height - 1, y + k); ++j) {
    for (Index i = std::max<Index>(0, x - k); i <= std::min(geom.width - 1, x + k); ++i) {
      for (Index c = 0; c < geom.channels; ++c) v[geom.flat(i, j, c)] = 1.0;
    }
  }
  return v;
}

Vec square_window(Index x0, Index y0, Index s, const ImageGeometry& geom) {
  if (s < 1 || x0 < 0 || y0 < 0 || x0 + s > geom.width || y0 + s > geom.height) {
    throw ValidationError("square window does not fit inside the image");
  }
  Vec v = Vec::Zero(geom.dims());
  for (Index j = y0; j < y0 + s; ++j) {
    for (Index i = x0; i < x0 + s; ++i) {
      for (Index c = 0; c < geom.channels; ++c) v[geom.flat(i, j, c)] = 1.0;
    }
  }
  return v;
}

std::vector<std::pair<Index, Index>> interior_centers(Index s, const ImageGeometry& geom) {
  if (s < 0) throw ValidationError("patch size must be nonnegative");
  if (s > std::min(geom.width, geom.height)) {
    throw ValidationError("patch size " + std::to_string(s) + " exceeds the image (" + geom.to_string() + ")");
  }
  // Even windows are centred on the pixel right of (below) the midpoint.
  const Index lo = s / 2;
  const Index hi = std::max<Index>(1, (s + 1) / 2);
  std::vector<std::pair<Index, Index>> centres;
  for (Index y = lo; y <= geom.height - hi; ++y) {
    for (Index x = lo; x <= geom.width - hi; ++x) centres.emplace_back(x, y);
  }
  return centres;
}

std::vector<std::pair<Index, Index>> els_translations(Index x, Index y, Index s, const ImageGeometry& geom) {
  if (s < 1 || s % 2 == 0) throw ValidationError("ELS patch size must be odd and >= 1");
  const Index k = s / 2;
  const Index W = geom.width;
  const Index H = geom.height;
  // A pixel is "inside" along an axis when the full patch fits there.
  const bool in_x = k <= x && x <= W - k - 1;
  const bool in_y = k <= y && y <= H - k - 1;
  std::vector<Index> di{0}, dj{0};
  if (in_x) {
    di.clear();
    for (Index i = k - x; i < W - x - k; ++i) di.push_back(i);
  }
  if (in_y) {
    dj.clear();
    for (Index j = k - y; j < H - y - k; ++j) dj.push_back(j);
  }
  std::vector<std::pair<Index, Index>> shifts;
  if (in_x || in_y) {
    for (Index j : dj) {
      for (Index i : di) shifts.emplace_back(i, j);
    }
  } else {
    shifts.emplace_back(0, 0);
  }
  return shifts;
}

Dataset translate_dataset(const Dataset& data, const std::vector<std::pair<Index, Index>>& shifts) {
  const ImageGeometry& g = data.geometry();
  const Index n = data.size();
  const Index d = g.dims();
  Batch out = Batch::Zero(n * static_cast<Index>(shifts.size()), d);
  std::vector<std::int64_t> origin(static_cast<std::size_t>(out.rows()));
  for (std::size_t s = 0; s < shifts.size(); ++s) {
    const auto [di, dj] = shifts[s];
    for (Index m = 0; m < n; ++m) {
      const Index row = static_cast<Index>(s) * n + m;
      origin[static_cast<std::size_t>(row)] = data.origin(m);
      for (Index v = 0; v < g.height; ++v) {
        const Index sv = v + dj;
        if (sv < 0 || sv >= g.height) continue;
        for (Index u = 0; u < g.width; ++u) {
          const Index su = u + di;
          if (su < 0 || su >= g.width) continue;
          for (Index c = 0; c < g.channels; ++c) out(row, g.flat(u, v, c)) = data.images()(m, g.flat(su, sv, c));
        }
      }
    }
  }
  return Dataset(g, std::move(out), std::move(origin));
}

FpmcModel build_pspc_square(const ScheduleTable& sizes, DatasetPtr data, const DiffusionSchedule& sched, bool clamp) {
  require_table_fits(sizes, sched, ScheduleTable::Kind::PatchSize);
  const SourceMeasure nu = uniform_source(data);
  const ImageGeometry& g = data->geometry();
  std::vector<FpmcStep> steps;
  for (std::size_t i = 0; i < sched.num_steps(); ++i) {
    Index s = sizes.patch_size(i);
    if (s > std::min(g.width, g.height)) {
      if (!clamp) {
        throw ValidationError("step " + std::to_string(i) + ": patch size " + std::to_string(s) + " exceeds the image (" +
                              g.to_string() + ")");
      }
      s = std::min(g.width, g.height);
    }
    // Every window that fits, keyed by its upper-left pixel; for odd s this
    // is the interior-centre set.
    const Index nx = g.width - s + 1;
    const Index ny = g.height - s + 1;
    Batch Q(nx * ny, g.dims());
    for (Index y0 = 0; y0 < ny; ++y0) {
      for (Index x0 = 0; x0 < nx; ++x0) Q.row(y0 * nx + x0) = square_window(x0, y0, s, g).transpose();
    }
    Batch R = Q;
    steps.push_back(shared_source_step(sched.t_grid()[i], std::move(Q), std::move(R), nu));
  }
  return FpmcModel(g, sched, std::move(steps));
}

FpmcModel build_ls(const ScheduleTable& sizes, DatasetPtr data, const DiffusionSchedule& sched) {
  require_table_fits(sizes, sched, ScheduleTable::Kind::PatchSize);
  const SourceMeasure nu = uniform_source(data);
  const ImageGeometry& g = data->geometry();
  std::vector<FpmcStep> steps;
  for (std::size_t i = 0; i < sched.num_steps(); ++i) {
    const Index s = sizes.patch_size(i);
    Batch Q(g.pixels(), g.dims());
    Batch R(g.pixels(), g.dims());
    for (Index y = 0; y < g.height; ++y) {
      for (Index x = 0; x < g.width; ++x) {
        Q.row(g.pixel_index(x, y)) = square_patch_indicator(x, y, s, g).transpose();
        R.row(g.pixel_index(x, y)) = pixel_indicator(x, y, g).transpose();
      }
    }
    steps.push_back(shared_source_step(sched.t_grid()[i], std::move(Q), std::move(R), nu));
  }
  return FpmcModel(g, sched, std::move(steps));
}

FpmcModel build_els(const ScheduleTable& sizes, DatasetPtr data, const DiffusionSchedule& sched) {
  require_table_fits(sizes, sched, ScheduleTable::Kind::PatchSize);
  const SourceMeasure base = uniform_source(data);
  const ImageGeometry& g = data->geometry();
  // Translated datasets are shared across steps with equal shift lists.
  std::map<std::vector<std::pair<Index, Index>>, SourceMeasure> cache;
  std::vector<FpmcStep> steps;
  for (std::size_t i = 0; i < sched.num_steps(); ++i) {
    const Index s = sizes.patch_size(i);
    FpmcStep step;
    step.t = sched.t_grid()[i];
    step.Q.resize(g.pixels(), g.dims());
    step.R.resize(g.pixels(), g.dims());
    std::map<std::vector<std::pair<Index, Index>>, std::size_t> local;
    for (Index y = 0; y < g.height; ++y) {
      for (Index x = 0; x < g.width; ++x) {
        const Index l = g.pixel_index(x, y);
        step.Q.row(l) = square_patch_indicator(x, y, s, g).transpose();
        step.R.row(l) = pixel_indicator(x, y, g).transpose();
        auto shifts = els_translations(x, y, s, g);
        auto it = local.find(shifts);
        if (it == local.end()) {
          const bool identity = shifts.size() == 1 && shifts[0] == std::pair<Index, Index>{0, 0};
          if (identity) {
            step.sources.push_back(base);
          } else {
            auto c = cache.find(shifts);
            if (c == cache.end()) {
              auto translated = std::make_shared<const Dataset>(translate_dataset(*data, shifts));
              c = cache.emplace(shifts, SourceMeasure::uniform(translated)).first;
            }
            step.sources.push_back(c->second);
          }
          it = local.emplace(std::move(shifts), step.sources.size() - 1).first;
        }
        step.source_of.push_back(it->second);
      }
    }
    steps.push_back(std::move(step));
  }
  return FpmcModel(g, sched, std::move(steps));
}

Vec cumulative_threshold_mask(const Eigen::Ref<const Vec>& map, double tau, const ImageGeometry& geom) {
  if (map.size() != geom.dims()) throw ValidationError("sensitivity map has wrong dimension");
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("threshold must lie in (0, 1]");
  const Index P = geom.pixels();
  const Index C = geom.channels;
  Vec pix(P);
  for (Index p = 0; p < P; ++p) {
    double acc = 0.0;
    for (Index c = 0; c < C; ++c) {
      const double v = map[p * C + c];
      if (!std::isfinite(v) || v < 0.0) throw ValidationError("sensitivity map entries must be finite and nonnegative");
      acc += v;
    }
    pix[p] = acc / static_cast<double>(C);
  }
  std::vector<Index> order(static_cast<std::size_t>(P));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return pix[a] > pix[b]; });
  double total = 0.0;
  for (Index p : order) total += pix[p];
  if (!(total > 0.0)) throw ValidationError("sensitivity map is all zero");
  const double target = tau * total;
  Vec mask = Vec::Zero(geom.dims());
  double acc = 0.0;
  for (Index p : order) {
    if (pix[p] <= 0.0) break;
    acc += pix[p];
    for (Index c = 0; c < C; ++c) mask[p * C + c] = 1.0;
    if (acc >= target) break;
  }
  return mask;
}

SensitivityMap::SensitivityMap(ImageGeometry geometry, std::vector<double> t, Batch maps)
    : geometry_(geometry), t_(std::move(t)), maps_(std::move(maps)) {
  if (maps_.rows() != static_cast<Index>(t_.size()) * geometry_.pixels() || maps_.cols() != geometry_.dims()) {
    throw ValidationError("sensitivity map needs steps * H * W rows of length d");
  }
  if (!(maps_.array() >= 0.0).all() || !maps_.allFinite()) {
    throw ValidationError("sensitivity map entries must be finite and nonnegative");
  }
}

void SensitivityMap::save(const std::filesystem::path& path) const {
  write_tensor(path, geometry_, maps_, {{"kind", "sensitivity-map"}, {"steps", t_.size()}, {"t", t_}});
}

SensitivityMap SensitivityMap::load(const std::filesystem::path& path) {
  TensorFile f = read_tensor(path);
  if (!f.extra.contains("t")) throw ValidationError("sensitivity map file lacks per-step times 't'");
  return SensitivityMap(f.geometry, f.extra["t"].get<std::vector<double>>(), std::move(f.data));
}

SensitivityMap synthetic_bump_maps(const ImageGeometry& geom, const std::vector<double>& t_grid, double min_width,
                                   double max_width) {
  if (t_grid.empty()) throw ValidationError("need at least one time");
  if (max_width <= 0.0) max_width = static_cast<double>(std::max(geom.width, geom.height));
  if (!(min_width > 0.0) || max_width < min_width) throw ValidationError("invalid bump widths");
  const auto [lo_it, hi_it] = std::minmax_element(t_grid.begin(), t_grid.end());
  const double lo = std::log(*lo_it);
  const double hi = std::log(*hi_it);
  const Index P = geom.pixels();
  Batch maps(static_cast<Index>(t_grid.size()) * P, geom.dims());
  for (std::size_t s = 0; s < t_grid.size(); ++s) {
    const double frac = hi > lo ? (std::log(t_grid[s]) - lo) / (hi - lo) : 1.0;
    const double w = min_width * std::pow(max_width / min_width, frac);
    for (Index y = 0; y < geom.height; ++y) {
      for (Index x = 0; x < geom.width; ++x) {
        auto row = maps.row(static_cast<Index>(s) * P + geom.pixel_index(x, y));
        for (Index v = 0; v < geom.height; ++v) {
          for (Index u = 0; u < geom.width; ++u) {
            const double r2 = static_cast<double>((u - x) * (u - x) + (v - y) * (v - y));
            const double val = std::exp(-r2 / (2.0 * w * w));
            for (Index c = 0; c < geom.channels; ++c) row[geom.flat(u, v, c)] = val;
          }
        }
      }
    }
  }
  return SensitivityMap(geom, t_grid, std::move(maps));
}

FpmcModel build_pspc_flex(const SensitivityMap& maps, const ScheduleTable& taus, DatasetPtr data,
                          const DiffusionSchedule& sched, FlexReport* report) {
  require_table_fits(taus, sched, ScheduleTable::Kind::Threshold);
  const SourceMeasure nu = uniform_source(data);
  const ImageGeometry& g = data->geometry();
  if (!(maps.geometry() == g)) throw ValidationError("sensitivity map geometry does not match the dataset");
  if (maps.num_steps() != sched.num_steps()) {
    throw ValidationError("sensitivity map has " + std::to_string(maps.num_steps()) + " steps but the grid has " +
                          std::to_string(sched.num_steps()));
  }
  std::vector<FpmcStep> steps;
  for (std::size_t i = 0; i < sched.num_steps(); ++i) {
    const double tau = taus.tau(i);
    Batch Q(g.pixels(), g.dims());
    parallel_for(g.pixels(), [&](Index p) {
      const Index x = p % g.width;
      const Index y = p / g.width;
      Q.row(p) = cumulative_threshold_mask(maps.map(i, x, y).transpose(), tau, g).transpose();
    });
    if (report) {
      for (Index p = 0; p < g.pixels(); ++p) {
        if (Q(p, p * g.channels) == 0.0) report->missing_self.emplace_back(i, p);
      }
    }
    Batch R = Q;
    steps.push_back(shared_source_step(sched.t_grid()[i], std::move(Q), std::move(R), nu));
  }
  return FpmcModel(g, sched, std::move(steps));
}

Batch lukoianov_masks(const WienerModel& wiener, double tau, double t, const DiffusionSchedule& sched) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("Lukoianov threshold must lie in (0, 1)");
  const Vec f = wiener_shrink_factors(wiener, t, sched);
  const Batch& U = wiener.eigvecs;
  const Index d = U.rows();
  const Batch Uf = U * f.asDiagonal();
  Batch masks = Batch::Zero(d, d);
  parallel_for(d, [&](Index l) {
    const Vec row = U * Uf.row(l).transpose();
    const double mx = row.maxCoeff();
    if (!(mx > 0.0)) {
      masks(l, l) = 1.0;
      return;
    }
    for (Index k = 0; k < d; ++k) masks(l, k) = row[k] / mx > tau ? 1.0 : 0.0;
  });
  return masks;
}

FpmcModel build_lukoianov(const WienerModel& wiener, double tau, DatasetPtr data, const DiffusionSchedule& sched) {
  const SourceMeasure nu = uniform_source(data);
  const ImageGeometry& g = data->geometry();
  if (wiener.mean.size() != g.dims()) throw ValidationError("Wiener model does not match the dataset dimension");
  std::vector<FpmcStep> steps;
  for (std::size_t i = 0; i < sched.num_steps(); ++i) {
    const double t = sched.t_grid()[i];
    Batch Q = lukoianov_masks(wiener, tau, t, sched);
    Batch R = Batch::Identity(g.dims(), g.dims());
    steps.push_back(shared_source_step(t, std::move(Q), std::move(R), nu));
  }
  return FpmcModel(g, sched, std::move(steps));
}

FpmcModel build_full_image(DatasetPtr data, const DiffusionSchedule& sched) {
  const SourceMeasure nu = uniform_source(data);
  const ImageGeometry& g = data->geometry();
  std::vector<FpmcStep> steps;
  for (double t : sched.t_grid()) {
    steps.push_back(shared_source_step(t, Batch::Ones(1, g.dims()), Batch::Ones(1, g.dims()), nu));
  }
  return FpmcModel(g, sched, std::move(steps));
}

}  // namespace fpmc
