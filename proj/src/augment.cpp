#include "fpmc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_set>

#include "fpmc/parallel.hpp"

namespace fpmc {

namespace {

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void require_image(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom) {
  if (img.size() != geom.dims()) throw ValidationError("image does not match geometry");
}

// out(x, y) = in(map(x, y)) with bilinear interpolation.
template <class Map>
Vec resample(const Eigen::Ref<const Vec>& img, const ImageGeometry& g, Map&& map) {
  require_image(img, g);
  Vec out(g.dims());
  for (Index y = 0; y < g.height; ++y) {
    for (Index x = 0; x < g.width; ++x) {
      const auto [fx, fy] = map(static_cast<double>(x), static_cast<double>(y));
      const double flx = std::floor(fx);
      const double fly = std::floor(fy);
      const double wx = fx - flx;
      const double wy = fy - fly;
      const Index x0 = static_cast<Index>(flx);
      const Index y0 = static_cast<Index>(fly);
      const Index xa = reflect(x0, g.width), xb = reflect(x0 + 1, g.width);
      const Index ya = reflect(y0, g.height), yb = reflect(y0 + 1, g.height);
      for (Index c = 0; c < g.channels; ++c) {
        double v = (1.0 - wy) * ((1.0 - wx) * img[g.flat(xa, ya, c)] + wx * img[g.flat(xb, ya, c)]);
        if (wy != 0.0) v += wy * ((1.0 - wx) * img[g.flat(xa, yb, c)] + wx * img[g.flat(xb, yb, c)]);
        out[g.flat(x, y, c)] = std::clamp(v, -1.0, 1.0);
      }
    }
  }
  return out;
}

long long quantize(double v) { return std::llround(v * 1e6); }

}  // namespace

Vec hflip(const Eigen::Ref<const Vec>& img, const ImageGeometry& g) {
  require_image(img, g);
  Vec out(g.dims());
  for (Index y = 0; y < g.height; ++y) {
    for (Index x = 0; x < g.width; ++x) {
      for (Index c = 0; c < g.channels; ++c) out[g.flat(x, y, c)] = img[g.flat(g.width - 1 - x, y, c)];
    }
  }
  return out;
}

Vec vflip(const Eigen::Ref<const Vec>& img, const ImageGeometry& g) {
  require_image(img, g);
  Vec out(g.dims());
  for (Index y = 0; y < g.height; ++y) {
    for (Index x = 0; x < g.width; ++x) {
      for (Index c = 0; c < g.channels; ++c) out[g.flat(x, y, c)] = img[g.flat(x, g.height - 1 - y, c)];
    }
  }
  return out;
}

Vec translate(const Eigen::Ref<const Vec>& img, const ImageGeometry& g, double dx, double dy) {
  if (!std::isfinite(dx) || !std::isfinite(dy)) throw ValidationError("translation offsets must be finite");
  return resample(img, g, [&](double x, double y) { return std::pair{x - dx, y - dy}; });
}

Vec rotate(const Eigen::Ref<const Vec>& img, const ImageGeometry& g, double theta) {
  if (!std::isfinite(theta)) throw ValidationError("rotation angle must be finite");
  const double cx = 0.5 * static_cast<double>(g.width - 1);
  const double cy = 0.5 * static_cast<double>(g.height - 1);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return resample(img, g, [&](double x, double y) {
    const double u = x - cx;
    const double v = y - cy;
    return std::pair{cx + c * u + s * v, cy - s * u + c * v};
  });
}

Vec scale(const Eigen::Ref<const Vec>& img, const ImageGeometry& g, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("scale factor must be positive");
  const double cx = 0.5 * static_cast<double>(g.width - 1);
  const double cy = 0.5 * static_cast<double>(g.height - 1);
  return resample(img, g, [&](double x, double y) { return std::pair{cx + (x - cx) / s, cy + (y - cy) / s}; });
}

AugmentStrategy parse_strategy(const std::string& text) {
  if (text == "hflip") return AugmentStrategy::HFlip;
  if (text == "vflip") return AugmentStrategy::VFlip;
  if (text == "translate") return AugmentStrategy::Translate;
  if (text == "rotate") return AugmentStrategy::Rotate;
  if (text == "scale") return AugmentStrategy::Scale;
  throw ValidationError("unknown augmentation strategy '" + text + "'");
}

std::string to_string(AugmentStrategy s) {
  switch (s) {
    case AugmentStrategy::HFlip: return "hflip";
    case AugmentStrategy::VFlip: return "vflip";
    case AugmentStrategy::Translate: return "translate";
    case AugmentStrategy::Rotate: return "rotate";
    case AugmentStrategy::Scale: return "scale";
  }
  return "hflip";
}

std::string AugmentationLabel::key() const {
  std::string k = to_string(strategy) + ":" + std::to_string(source);
  for (double p : params) k += ":" + std::to_string(quantize(p));
  return k;
}

nlohmann::json AugmentationLabel::to_json() const {
  return {{"source_index", source}, {"strategy", to_string(strategy)}, {"params", params}, {"output_index", output_index}};
}

std::vector<AugmentationLabel> sample_labels(Index n_images, const ImageGeometry& geom, const AugmentPlan& plan) {
  if (n_images < 1) throw ValidationError("no images to augment");
  std::vector<AugmentationLabel> labels;
  const bool reflection = plan.strategy == AugmentStrategy::HFlip || plan.strategy == AugmentStrategy::VFlip;
  if (reflection) {
    for (Index i = 0; i < n_images; ++i) labels.push_back({plan.strategy, i, {}, -1});
    return labels;
  }
  if (plan.pool_per_image < 1) throw ValidationError("augmentation pool must hold at least one candidate per image");
  std::mt19937_64 rng(plan.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  for (Index i = 0; i < n_images; ++i) {
    for (Index k = 0; k < plan.pool_per_image; ++k) {
      AugmentationLabel l{plan.strategy, i, {}, -1};
      switch (plan.strategy) {
        case AugmentStrategy::Translate: {
          const double ex = normal(rng);
          const double ey = normal(rng);
          l.params = {ex * static_cast<double>(geom.width) / 8.0, ey * static_cast<double>(geom.height) / 8.0};
          break;
        }
        case AugmentStrategy::Rotate: l.params = {angle(rng)}; break;
        case AugmentStrategy::Scale: l.params = {std::exp(0.2 * normal(rng))}; break;
        default: break;
      }
      labels.push_back(std::move(l));
    }
  }
  return labels;
}

std::vector<AugmentationLabel> dedup_labels(const std::vector<AugmentationLabel>& labels) {
  std::unordered_set<std::string> seen;
  std::vector<AugmentationLabel> out;
  for (const auto& l : labels) {
    if (seen.insert(l.key()).second) out.push_back(l);
  }
  return out;
}

std::vector<AugmentationLabel> subsample_labels(const std::vector<AugmentationLabel>& labels, Index n_images,
                                                Index target, std::uint64_t seed) {
  if (target < 0) throw ValidationError("augmentation target must be >= 0");
  std::vector<std::vector<AugmentationLabel>> by_image(static_cast<std::size_t>(n_images));
  for (const auto& l : labels) {
    if (l.source < 0 || l.source >= n_images) throw ValidationError("label source index out of range");
    by_image[static_cast<std::size_t>(l.source)].push_back(l);
  }
  std::mt19937_64 rng(seed);
  const Index quota = target / n_images;
  const Index extra = target % n_images;
  std::vector<Index> images(static_cast<std::size_t>(n_images));
  std::iota(images.begin(), images.end(), Index{0});
  std::shuffle(images.begin(), images.end(), rng);
  std::vector<Index> take(static_cast<std::size_t>(n_images), quota);
  for (Index i = 0; i < extra; ++i) ++take[static_cast<std::size_t>(images[static_cast<std::size_t>(i)])];
  std::vector<AugmentationLabel> out;
  for (Index i = 0; i < n_images; ++i) {
    auto& pool = by_image[static_cast<std::size_t>(i)];
    const Index k = take[static_cast<std::size_t>(i)];
    if (static_cast<Index>(pool.size()) < k) {
      throw ValidationError("infeasible augmentation plan: image " + std::to_string(i) + " has " +
                            std::to_string(pool.size()) + " distinct augmentations but needs " + std::to_string(k));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    out.insert(out.end(), pool.begin(), pool.begin() + k);
  }
  return out;
}

Vec apply_label(const Eigen::Ref<const Vec>& img, const ImageGeometry& geom, const AugmentationLabel& label) {
  switch (label.strategy) {
    case AugmentStrategy::HFlip: return hflip(img, geom);
    case AugmentStrategy::VFlip: return vflip(img, geom);
    case AugmentStrategy::Translate: return translate(img, geom, label.params.at(0), label.params.at(1));
    case AugmentStrategy::Rotate: return rotate(img, geom, label.params.at(0));
    case AugmentStrategy::Scale: return scale(img, geom, label.params.at(0));
  }
  throw ValidationError("unknown augmentation strategy");
}

AugmentResult build_augmented(const Dataset& data, const AugmentPlan& plan) {
  if (!(plan.fraction >= 0.0) || !std::isfinite(plan.fraction)) throw ValidationError("augmentation fraction must be >= 0");
  const Index n = data.size();
  const Index target = static_cast<Index>(std::floor(plan.fraction * static_cast<double>(n) + 1e-9));
  const bool reflection = plan.strategy == AugmentStrategy::HFlip || plan.strategy == AugmentStrategy::VFlip;
  if (reflection && target > n) {
    throw ValidationError("infeasible augmentation plan: " + to_string(plan.strategy) + " allows at most one image per source (" +
                          std::to_string(n) + "), requested " + std::to_string(target));
  }
  auto labels = dedup_labels(sample_labels(n, data.geometry(), plan));
  labels = subsample_labels(labels, n, target, plan.seed + 1);
  // Stable output order: by source image, then by key.
  std::sort(labels.begin(), labels.end(), [](const auto& a, const auto& b) {
    return a.source != b.source ? a.source < b.source : a.key() < b.key();
  });
  const Index m = static_cast<Index>(labels.size());
  Batch all(n + m, data.dims());
  all.topRows(n) = data.images();
  std::vector<std::int64_t> origin(static_cast<std::size_t>(n + m));
  for (Index i = 0; i < n; ++i) origin[static_cast<std::size_t>(i)] = data.origin(i);
  parallel_for(m, [&](Index j) {
    const auto& l = labels[static_cast<std::size_t>(j)];
    all.row(n + j) = apply_label(data.row(l.source).transpose(), data.geometry(), l).transpose();
  });
  for (Index j = 0; j < m; ++j) {
    labels[static_cast<std::size_t>(j)].output_index = n + j;
    origin[static_cast<std::size_t>(n + j)] = data.origin(labels[static_cast<std::size_t>(j)].source);
  }
  return {Dataset(data.geometry(), std::move(all), std::move(origin)), std::move(labels)};
}

void write_label_ledger(const std::filesystem::path& path, const std::vector<AugmentationLabel>& labels) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const auto& l : labels) out << l.to_json().dump() << "\n";
}

Dataset ingest_synthetic(const Dataset& data, const Dataset& synthetic, Index count,
                         const std::vector<std::uint64_t>& synthetic_seeds,
                         const std::vector<std::uint64_t>& reserved_seeds) {
  if (!(synthetic.geometry() == data.geometry())) {
    throw ValidationError("synthetic geometry " + synthetic.geometry().to_string() + " does not match " +
                          data.geometry().to_string());
  }
  if (count < 0 || count > synthetic.size()) throw ValidationError("synthetic count out of range");
  const std::unordered_set<std::uint64_t> reserved(reserved_seeds.begin(), reserved_seeds.end());
  for (auto s : synthetic_seeds) {
    if (reserved.count(s)) {
      throw ValidationError("synthetic samples reuse seed " + std::to_string(s) + " reserved for evaluation");
    }
  }
  if (count == 0) return data;
  Dataset extra = synthetic.slice(0, count);
  std::vector<std::int64_t> origin(static_cast<std::size_t>(count), -1);
  return data.concat(Dataset(extra.geometry(), extra.images(), std::move(origin)));
}

}  // namespace fpmc
