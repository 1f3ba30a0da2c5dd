#include "fpmc/source.hpp"

#include <cmath>

namespace fpmc {

SourceMeasure SourceMeasure::uniform(DatasetPtr data) {
  if (!data) throw ValidationError("source measure needs a dataset");
  const Index n = data->size();
  return SourceMeasure(std::move(data), Vec::Constant(n, 1.0 / static_cast<double>(n)));
}

SourceMeasure::SourceMeasure(DatasetPtr data, Vec weights, std::vector<std::uint8_t> active)
    : data_(std::move(data)), weights_(std::move(weights)), active_(std::move(active)) {
  if (!data_) throw ValidationError("source measure needs a dataset");
  const Index n = data_->size();
  if (weights_.size() != n) throw ValidationError("source weights do not match dataset size");
  if (active_.empty()) active_.assign(static_cast<std::size_t>(n), 1);
  if (static_cast<Index>(active_.size()) != n) throw ValidationError("active mask does not match dataset size");

  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(weights_[i]) || weights_[i] < 0.0) throw ValidationError("source weights must be finite and nonnegative");
    if (active_[static_cast<std::size_t>(i)] == 0) weights_[i] = 0.0;
    total += weights_[i];
  }
  if (!(total > 0.0)) throw ValidationError("source measure has empty support");
  weights_ /= total;
  for (Index i = 0; i < n; ++i) {
    if (weights_[i] > 0.0) {
      support_.push_back(i);
      log_weights_.push_back(std::log(weights_[i]));
    }
  }
}

SourceMeasure SourceMeasure::without(const std::vector<Index>& rows) const {
  std::vector<std::uint8_t> mask = active_;
  for (Index r : rows) {
    if (r < 0 || r >= data_->size()) throw ValidationError("masked row out of range");
    mask[static_cast<std::size_t>(r)] = 0;
  }
  return SourceMeasure(data_, weights_, std::move(mask));
}

}  // namespace fpmc
