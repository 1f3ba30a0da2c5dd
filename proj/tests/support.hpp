#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "fpmc/dataset.hpp"

namespace fpmc::testing {

inline Batch random_batch(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Batch b(rows, cols);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
  return b;
}

inline Batch gaussian_batch(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Batch b(rows, cols);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = n(rng);
  return b;
}

inline DatasetPtr random_dataset(const ImageGeometry& g, Index n, std::mt19937_64& rng) {
  return std::make_shared<const Dataset>(g, random_batch(n, g.dims(), rng));
}

// Smooth images from a 3-parameter family plus a little pixel noise.
inline Batch manifold_images(const ImageGeometry& g, Index n, std::mt19937_64& rng, double noise = 0.05) {
  std::normal_distribution<double> normal;
  Batch out(n, g.dims());
  const double pi = std::acos(-1.0);
  for (Index i = 0; i < n; ++i) {
    const double a = normal(rng), b = normal(rng), c = normal(rng);
    for (Index y = 0; y < g.height; ++y) {
      for (Index x = 0; x < g.width; ++x) {
        const double u = static_cast<double>(x) / (g.width - 1), v = static_cast<double>(y) / (g.height - 1);
        const double f = a * std::cos(pi * u) + b * std::cos(pi * v) + 0.7 * c * std::sin(pi * (u + v));
        for (Index ch = 0; ch < g.channels; ++ch) {
          const double val = 0.8 * std::tanh(f) + noise * normal(rng);
          out(i, g.flat(x, y, ch)) = std::clamp(val, -1.0, 1.0);
        }
      }
    }
  }
  return out;
}

inline double max_abs(const Batch& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

inline double rel_err(const Batch& a, const Batch& b) {
  const double scale = std::max(max_abs(b), 1e-300);
  return max_abs(a - b) / scale;
}

}  // namespace fpmc::testing
