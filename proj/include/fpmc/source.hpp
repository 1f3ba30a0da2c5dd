#pragma once

#include <cstdint>
#include <vector>

#include "fpmc/dataset.hpp"

namespace fpmc {

/// Discrete probability measure over the rows of a dataset.
///
/// Weights are renormalized over active rows on construction; inactive rows
/// carry weight 0. The support is the set of active rows with positive weight.
class SourceMeasure {
 public:
  static SourceMeasure uniform(DatasetPtr data);
  /// `weights` need not be normalized; `active` defaults to all rows.
  SourceMeasure(DatasetPtr data, Vec weights, std::vector<std::uint8_t> active = {});

  const Dataset& dataset() const { return *data_; }
  const DatasetPtr& dataset_ptr() const { return data_; }
  const Vec& weights() const { return weights_; }
  bool active(Index i) const { return active_[static_cast<std::size_t>(i)] != 0; }
  const std::vector<std::uint8_t>& active_mask() const { return active_; }

  /// Active rows with positive weight, ascending.
  const std::vector<Index>& support() const { return support_; }
  /// log weight per support entry.
  const std::vector<double>& log_weights() const { return log_weights_; }

  /// Copy with `rows` deactivated and weights renormalized.
  SourceMeasure without(const std::vector<Index>& rows) const;

 private:
  DatasetPtr data_;
  Vec weights_;
  std::vector<std::uint8_t> active_;
  std::vector<Index> support_;
  std::vector<double> log_weights_;
};

}  // namespace fpmc
