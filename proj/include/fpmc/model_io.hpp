#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "fpmc/denoiser.hpp"

namespace fpmc {

nlohmann::json schedule_to_json(const DiffusionSchedule& sched);
DiffusionSchedule schedule_from_json(const nlohmann::json& j);

/// A denoiser read back from a model directory.
struct LoadedModel {
  std::string kind;  // "fpmc", "optimal" or "wiener"
  nlohmann::json manifest;
  DatasetPtr data;
  std::optional<DiffusionSchedule> schedule;
  std::shared_ptr<const FpmcModel> fpmc;
  std::optional<WienerModel> wiener;
  DenoiserPtr denoiser;
};

/// Model directory layout: manifest.json, dataset.fpmc (the base dataset),
/// and for FPMC models per-step Q/R tensors plus any source datasets that
/// are not the base dataset. `info` is merged into the manifest.
void save_fpmc_model(const std::filesystem::path& dir, const FpmcModel& model, const DatasetPtr& base,
                     const nlohmann::json& info = nlohmann::json::object());
void save_optimal_model(const std::filesystem::path& dir, const DatasetPtr& data, const DiffusionSchedule& sched,
                        const nlohmann::json& info = nlohmann::json::object());
void save_wiener_model(const std::filesystem::path& dir, const WienerModel& model, const DatasetPtr& data,
                       const DiffusionSchedule& sched, const nlohmann::json& info = nlohmann::json::object());

LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace fpmc
