#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpmc/types.hpp"

namespace fpmc {

/// N images of a common geometry, values in [-1, 1], stored one per row.
///
/// `origin` optionally maps each row to the row of a base dataset it was
/// derived from (translations, augmentations); -1 marks rows with no base
/// image. Empty means "row i is base row i".
class Dataset {
 public:
  Dataset(ImageGeometry geometry, Batch images, std::vector<std::int64_t> origin = {});

  const ImageGeometry& geometry() const { return geometry_; }
  const Batch& images() const { return images_; }
  Index size() const { return images_.rows(); }
  Index dims() const { return images_.cols(); }
  auto row(Index i) const { return images_.row(i); }

  bool has_origin() const { return !origin_.empty(); }
  std::int64_t origin(Index i) const {
    return origin_.empty() ? static_cast<std::int64_t>(i) : origin_[static_cast<std::size_t>(i)];
  }
  const std::vector<std::int64_t>& origins() const { return origin_; }

  /// Rows [begin, begin + count) as a new dataset.
  Dataset slice(Index begin, Index count) const;
  /// Concatenation; origins of `other` become -1 unless it carries its own.
  Dataset concat(const Dataset& other) const;

 private:
  ImageGeometry geometry_;
  Batch images_;
  std::vector<std::int64_t> origin_;
};

using DatasetPtr = std::shared_ptr<const Dataset>;

/// Contents of an FPMCTENS container file.
///
/// Layout: 8 bytes "FPMCTENS", a little-endian uint64 header length, the
/// UTF-8 JSON header {n, w, h, c, dtype, ...}, then n*w*h*c little-endian
/// values in row-major (n, y, x, c) order. Images use dtype "f32"; model
/// parameters may use "f64" so they reload exactly.
struct TensorFile {
  ImageGeometry geometry;
  Batch data;
  nlohmann::json extra = nlohmann::json::object();
};

enum class TensorDtype { f32, f64 };

void write_tensor(const std::filesystem::path& path, const ImageGeometry& geometry, const Batch& data,
                  const nlohmann::json& extra = nlohmann::json::object(), TensorDtype dtype = TensorDtype::f32);
TensorFile read_tensor(const std::filesystem::path& path);

/// Reads a tensor file or a directory of PNG images. PNG bytes map to
/// v / 127.5 - 1. An expected geometry, when given, must match.
Dataset load_dataset(const std::filesystem::path& path, const ImageGeometry* expected = nullptr);
void save_dataset(const std::filesystem::path& path, const Dataset& data, TensorDtype dtype = TensorDtype::f32);

/// 8-bit greyscale or RGB PNG codec; `bytes` is row-major (y, x, c).
struct PngImage {
  Index width = 0;
  Index height = 0;
  Index channels = 0;
  std::vector<std::uint8_t> bytes;
};
PngImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const PngImage& image);

std::uint8_t to_byte(double value);  // [-1, 1] -> [0, 255], clamped
double from_byte(std::uint8_t value);

/// Single image in [-1,1] to a PNG.
void write_image_png(const std::filesystem::path& path, const ImageGeometry& geometry,
                     const Eigen::Ref<const Vec>& image);
/// Grid of images, `columns` wide, one pixel of -1 padding between tiles.
void write_contact_sheet(const std::filesystem::path& path, const ImageGeometry& geometry,
                         const Batch& images, Index columns = 8);

}  // namespace fpmc
