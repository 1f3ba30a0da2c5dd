#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpmc/dataset.hpp"

namespace fpmc {

// Geometric transforms on one flattened image. Resampling is bilinear about
// the image centre; samples outside the frame use reflection ("reflect"
// mode: index -1 maps to 1). Outputs are clamped to [-1, 1].
Vec hflip(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom);
Vec vflip(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom);
/// out(x, y) = in(x - dx, y - dy).
Vec translate(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom, double dx, double dy);
/// Counter-clockwise in image coordinates (y down) by `theta` radians.
Vec rotate(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom, double theta);
/// Magnifies by `s` (s > 1 crops, s < 1 pads by reflection).
Vec scale(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom, double s);

enum class AugmentStrategy { HFlip, VFlip, Translate, Rotate, Scale };

AugmentStrategy parse_strategy(const std::string& text);
std::string to_string(AugmentStrategy s);

struct AugmentationLabel {
  AugmentStrategy strategy = AugmentStrategy::HFlip;
  Index source = 0;
  std::vector<double> params;  // translate: {dx, dy}; rotate: {theta}; scale: {s}
  Index output_index = -1;

  /// Injective key over (strategy, source, params rounded to 1e-6).
  std::string key() const;
  nlohmann::json to_json() const;
};

struct AugmentPlan {
  AugmentStrategy strategy = AugmentStrategy::HFlip;
  double fraction = 1.0;       // |D'| / |D|
  Index pool_per_image = 20;   // candidates sampled per source image
  std::uint64_t seed = 0;
};

/// Candidate labels: one per image for reflections, `pool_per_image` draws
/// otherwise (translate: d = eps * size / 8, eps ~ N(0, 1); rotate:
/// theta ~ U(-pi, pi); scale: ln s ~ N(0, 0.2^2)).
std::vector<AugmentationLabel> sample_labels(Index n_images, const ImageGeometry& geom, const AugmentPlan& plan);

/// First occurrence of each key, order preserved.
std::vector<AugmentationLabel> dedup_labels(const std::vector<AugmentationLabel>& labels);

/// Chooses `target` labels: an equal quota per image when target is a
/// multiple of the image count, one each for a random subset of images when
/// target < count, otherwise the floor quota plus one extra for a random
/// subset. Errors if an image has too few candidates.
std::vector<AugmentationLabel> subsample_labels(const std::vector<AugmentationLabel>& labels, Index n_images,
                                                Index target, std::uint64_t seed);

Vec apply_label(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom, const AugmentationLabel& label);

struct AugmentResult {
  Dataset data;  // D followed by D'
  std::vector<AugmentationLabel> labels;
};

/// |D'| = floor(fraction * N). Augmented rows carry their source row as origin.
AugmentResult build_augmented(const Dataset& data, const AugmentPlan& plan);

void write_label_ledger(const std::filesystem::path& path, const std::vector<AugmentationLabel>& labels);

/// D followed by the first `count` synthetic images (origin -1). Rejects the
/// synthetic set if its generation seeds overlap `reserved_seeds`.
Dataset ingest_synthetic(const Dataset& data, const Dataset& synthetic, Index count,
                         const std::vector<std::uint64_t>& synthetic_seeds = {},
                         const std::vector<std::uint64_t>& reserved_seeds = {});

}  // namespace fpmc
