#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpmc/denoiser.hpp"

namespace fpmc {

enum class FinetuneMode { Q, R, Joint };

FinetuneMode parse_finetune_mode(const std::string& text);
std::string to_string(FinetuneMode mode);

/// Log-parameters of one step: q_l = exp(theta_l), r_l = exp(phi_l).
/// Parameters of a component that is not trained are ignored and the base
/// step's values are used unchanged.
struct LogParams {
  Batch theta;
  Batch phi;
  FinetuneMode mode = FinetuneMode::Joint;

  bool trains_q() const { return mode != FinetuneMode::R; }
  bool trains_r() const { return mode != FinetuneMode::Q; }
};

/// theta = log(max(q, floor)), phi likewise.
LogParams init_log_params(const FpmcStep& base, FinetuneMode mode, double floor = 1e-3);

Batch effective_q(const LogParams& p, const FpmcStep& base);
Batch effective_r(const LogParams& p, const FpmcStep& base);

/// `base` with Q and R replaced by the effective values of `p`.
FpmcStep apply_params(const LogParams& p, const FpmcStep& base);

/// Copy of `nu` with every row whose origin is in `batch` deactivated.
SourceMeasure masked_source(const SourceMeasure& nu, const std::vector<Index>& batch);

/// k rows drawn without replacement with probability proportional to the
/// weights, returned as a uniform measure over the draw.
SourceMeasure mc_subsample(const SourceMeasure& nu, Index k, std::uint64_t seed);

struct Objective {
  double loss = 0.0;
  Batch denoised;
  Batch grad_theta;  // empty unless Q is trained and gradients were requested
  Batch grad_phi;
};

/// lambda * mean_b || target_b - D(z_b) ||^2 for the FPMC step defined by
/// `p` over `sources` (indexed by base.source_of), with optional gradients.
Objective finetune_objective(const LogParams& p, const FpmcStep& base, const std::vector<SourceMeasure>& sources,
                             const Batch& z, const Batch& target, const DiffusionSchedule& sched, double lambda,
                             bool with_grad);

/// Training batch: rows of the training dataset plus the noised inputs.
struct TrainBatch {
  std::vector<Index> indices;
  Batch z;
};

/// Loss on a batch with the source measures masked on the batch rows when
/// `leave_batch_out` is set.
double finetune_loss(const LogParams& p, const FpmcStep& base, const TrainBatch& batch, const Denoiser& target,
                     const DiffusionSchedule& sched, double lambda = 1.0, bool leave_batch_out = true);
Objective finetune_grad(const LogParams& p, const FpmcStep& base, const TrainBatch& batch, const Denoiser& target,
                        const DiffusionSchedule& sched, double lambda = 1.0, bool leave_batch_out = true);

struct AdamWConfig {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  Batch m;
  Batch v;
  long step = 0;
};

/// Decoupled weight decay followed by a bias-corrected Adam step.
void adamw_step(AdamWState& state, Batch& params, const Batch& grad, const AdamWConfig& cfg);

struct FinetuneConfig {
  double loss_weight = 1.0;
  AdamWConfig adam;
  Index batch_size = 256;
  long max_steps = 2000;
  Index mc_support_size = 0;  // 0 keeps the full support
  std::uint64_t seed = 0;
  FinetuneMode mode = FinetuneMode::Joint;
  bool leave_batch_out = true;
  DatasetPtr validation;  // held-out x; defaults to the training set
  Index validation_size = 0;  // 0: all validation images
  std::filesystem::path log_path;  // JSON lines; empty disables
};

struct FinetuneResult {
  FpmcStep step;  // best checkpoint
  LogParams params;
  double baseline_val_mse = 0.0;
  double best_val_mse = 0.0;
  long best_step = 0;  // optimizer steps taken at the best checkpoint (0: baseline)
  std::vector<nlohmann::json> log;
};

/// Fine-tunes step `step_index` of `model` against `target` using x drawn
/// from `train`, whose row indices must match the source origins.
FinetuneResult finetune_run(const FpmcModel& model, std::size_t step_index, const Denoiser& target,
                            const DatasetPtr& train, const FinetuneConfig& config);

/// Per-step validation MSE (mean over batch and dimensions).
double validation_mse(const FpmcStep& step, const Batch& z, const Batch& target, const DiffusionSchedule& sched);

/// Reference weight decay: 0.01 for t at or above a dataset threshold
/// (cifar10 1.92, ffhq64 4.37, afhq64 8.03), else 0.
double reference_weight_decay(const std::string& dataset, double t);

}  // namespace fpmc
