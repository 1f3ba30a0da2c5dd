#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpmc/denoiser.hpp"

namespace fpmc {

struct MetricSummary {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample std / sqrt(n); NaN when n < 2
  Index n = 0;
};

/// Mean and standard error of a list of values.
MetricSummary summarize(const std::vector<double>& values);

struct ComparisonReport {
  std::string label;
  MetricSummary mse;
  MetricSummary r2;
  std::vector<double> mse_per_sample;
  std::vector<double> r2_per_sample;
  std::vector<Index> excluded;  // reference samples with zero variance (r2 undefined)
  std::string r2_convention = "per-sample, reference-centred, v1";

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Pairs row i of `a` with row i of `b` (the reference).
ComparisonReport sample_similarity(const Batch& a, const Batch& b, const std::string& label = "");

struct SweepPoint {
  double t = 0.0;
  MetricSummary mse;
};

struct SweepResult {
  std::string label;
  std::vector<SweepPoint> points;

  nlohmann::json to_json() const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Per t: n_per_t draws x (uniform rows of `data`) and eps from a generator
/// seeded by (seed, t index), z = alpha x + sigma eps; reports the per-draw
/// mean squared difference between the two denoisers. Evaluations are done in
/// chunks of `chunk` rows; the result does not depend on the chunk size.
SweepResult denoiser_error_sweep(const Denoiser& denoiser, const Denoiser& target, const Dataset& data,
                                 const DiffusionSchedule& sched, const std::vector<double>& t_list, Index n_per_t,
                                 std::uint64_t seed, Index chunk = 256);

/// Noised inputs used by the sweep at one t, exposed for reuse.
Batch sweep_inputs(const Dataset& data, const DiffusionSchedule& sched, double t, std::size_t t_index, Index n,
                   std::uint64_t seed);

struct RelativeChange {
  std::vector<double> t;
  std::vector<double> percent;

  nlohmann::json to_json() const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// 100 (variant - baseline) / baseline per t.
RelativeChange relative_error_change(const SweepResult& baseline, const SweepResult& variant);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fpmc
