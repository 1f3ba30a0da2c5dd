#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fpmc {

/// Row-major real matrix; one image (or one estimator vector) per row.
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

/// Bad input, shape mismatch, or a violated precondition. CLI exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or a degenerate numerical state. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Image shape. Flattening is row-major over (y, x, c):
///   flat = (y * width + x) * channels + c
struct ImageGeometry {
  Index width = 0;
  Index height = 0;
  Index channels = 0;

  ImageGeometry() = default;
  ImageGeometry(Index w, Index h, Index c);

  Index dims() const { return width * height * channels; }
  Index pixels() const { return width * height; }

  Index flat(Index x, Index y, Index c = 0) const { return (y * width + x) * channels + c; }
  Index pixel_index(Index x, Index y) const { return y * width + x; }

  struct Coord {
    Index x, y, c;
  };
  Coord unflatten(Index flat_index) const;

  bool operator==(const ImageGeometry&) const = default;

  /// Parses "WxHxC" (or "WxH", C=1).
  static ImageGeometry parse(const std::string& text);
  std::string to_string() const;
};

}  // namespace fpmc
