#include "fpmc/types.hpp"

#include <sstream>
#include <vector>

namespace fpmc {

ImageGeometry::ImageGeometry(Index w, Index h, Index c) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || c < 1) {
    throw ValidationError("image geometry must have positive width, height and channels, got " +
                          std::to_string(w) + "x" + std::to_string(h) + "x" + std::to_string(c));
  }
}

ImageGeometry::Coord ImageGeometry::unflatten(Index flat_index) const {
  if (flat_index < 0 || flat_index >= dims()) {
    throw ValidationError("flat index out of range");
  }
  Coord out{};
  out.c = flat_index % channels;
  const Index pix = flat_index / channels;
  out.x = pix % width;
  out.y = pix / width;
  return out;
}

ImageGeometry ImageGeometry::parse(const std::string& text) {
  std::vector<long long> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, 'x')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("cannot parse geometry '" + text + "', expected WxHxC");
    }
  }
  if (parts.size() == 2) parts.push_back(1);
  if (parts.size() != 3) {
    throw ValidationError("cannot parse geometry '" + text + "', expected WxHxC");
  }
  return ImageGeometry(parts[0], parts[1], parts[2]);
}

std::string ImageGeometry::to_string() const {
  return std::to_string(width) + "x" + std::to_string(height) + "x" + std::to_string(channels);
}

}  // namespace fpmc
