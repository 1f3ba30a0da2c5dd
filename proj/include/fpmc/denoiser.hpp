#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>

#include "fpmc/classical.hpp"
#include "fpmc/estimator.hpp"

namespace fpmc {

/// Batched denoiser contract: (z batch, t) -> denoised batch. Implementations
/// are deterministic and safe to call concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Batch denoise(const Batch& z, double t) const = 0;
  virtual std::string name() const = 0;
};

using DenoiserPtr = std::shared_ptr<const Denoiser>;

class OptimalDenoiser final : public Denoiser {
 public:
  OptimalDenoiser(DatasetPtr data, DiffusionSchedule schedule);
  Batch denoise(const Batch& z, double t) const override;
  std::string name() const override { return "optimal"; }

 private:
  DatasetPtr data_;
  DiffusionSchedule schedule_;
};

class WienerDenoiser final : public Denoiser {
 public:
  WienerDenoiser(WienerModel model, DiffusionSchedule schedule);
  Batch denoise(const Batch& z, double t) const override;
  std::string name() const override { return "wiener"; }
  const WienerModel& model() const { return model_; }

 private:
  WienerModel model_;
  DiffusionSchedule schedule_;
};

/// Evaluates an FPMC at the schedule step whose time equals `t`.
class FpmcDenoiser final : public Denoiser {
 public:
  explicit FpmcDenoiser(std::shared_ptr<const FpmcModel> model, std::string label = "fpmc");
  Batch denoise(const Batch& z, double t) const override;
  std::string name() const override { return label_; }
  const FpmcModel& model() const { return *model_; }

 private:
  std::shared_ptr<const FpmcModel> model_;
  std::string label_;
};

/// Wraps any callable; used for tests and language bindings.
class CallbackDenoiser final : public Denoiser {
 public:
  using Fn = std::function<Batch(const Batch&, double)>;
  CallbackDenoiser(Fn fn, std::string label = "callback");
  Batch denoise(const Batch& z, double t) const override;
  std::string name() const override { return label_; }

 private:
  Fn fn_;
  std::string label_;
};

/// Precomputed (z, t) -> response table, e.g. outputs of an external network.
/// Lookup is exact on the float32-rounded z and t.
class ResponseTableDenoiser final : public Denoiser {
 public:
  /// `z` and `response` have matching rows; `t` has one entry per row.
  ResponseTableDenoiser(ImageGeometry geometry, Batch z, Batch response, std::vector<double> t);
  /// Reads `<stem>.z.fpmc`, `<stem>.response.fpmc`; each row's time is in the
  /// JSON header of the z file under "t" (scalar or per-row list).
  static ResponseTableDenoiser load(const std::filesystem::path& z_file, const std::filesystem::path& response_file);
  Batch denoise(const Batch& z, double t) const override;
  std::string name() const override { return "response-table"; }
  Index size() const { return response_.rows(); }

 private:
  std::string key(const double* z, double t) const;

  ImageGeometry geometry_;
  Batch response_;
  std::unordered_map<std::string, Index> index_;
};

/// Counts calls of a wrapped denoiser (one count per batched call).
class CountingDenoiser final : public Denoiser {
 public:
  explicit CountingDenoiser(DenoiserPtr inner) : inner_(std::move(inner)) {}
  Batch denoise(const Batch& z, double t) const override {
    calls_.fetch_add(1);
    return inner_->denoise(z, t);
  }
  std::string name() const override { return inner_->name(); }
  long calls() const { return calls_.load(); }

 private:
  DenoiserPtr inner_;
  mutable std::atomic<long> calls_{0};
};

}  // namespace fpmc
