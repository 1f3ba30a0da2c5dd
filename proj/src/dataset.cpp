#include "fpmc/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <png.h>

namespace fpmc {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic = {'F', 'P', 'M', 'C', 'T', 'E', 'N', 'S'};

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

}  // namespace

Dataset::Dataset(ImageGeometry geometry, Batch images, std::vector<std::int64_t> origin)
    : geometry_(geometry), images_(std::move(images)), origin_(std::move(origin)) {
  if (images_.rows() < 1) throw ValidationError("empty dataset");
  if (images_.cols() != geometry_.dims()) {
    throw ValidationError("dataset rows have " + std::to_string(images_.cols()) +
                          " values but geometry " + geometry_.to_string() + " needs " +
                          std::to_string(geometry_.dims()));
  }
  if (!origin_.empty() && static_cast<Index>(origin_.size()) != images_.rows()) {
    throw ValidationError("origin list length does not match dataset size");
  }
  if (!images_.allFinite()) throw ValidationError("dataset contains non-finite values");
  const double lo = images_.minCoeff();
  const double hi = images_.maxCoeff();
  if (lo < -1.0 || hi > 1.0) {
    throw ValidationError("dataset values must lie in [-1, 1], found range [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "]");
  }
}

Dataset Dataset::slice(Index begin, Index count) const {
  if (begin < 0 || count < 1 || begin + count > size()) throw ValidationError("dataset slice out of range");
  std::vector<std::int64_t> org;
  if (has_origin()) org.assign(origin_.begin() + begin, origin_.begin() + begin + count);
  return Dataset(geometry_, images_.middleRows(begin, count), std::move(org));
}

Dataset Dataset::concat(const Dataset& other) const {
  if (!(other.geometry() == geometry_)) throw ValidationError("cannot concatenate datasets of different geometry");
  Batch all(size() + other.size(), dims());
  all.topRows(size()) = images_;
  all.bottomRows(other.size()) = other.images_;
  std::vector<std::int64_t> org;
  org.reserve(static_cast<std::size_t>(all.rows()));
  for (Index i = 0; i < size(); ++i) org.push_back(origin(i));
  for (Index i = 0; i < other.size(); ++i) org.push_back(other.has_origin() ? other.origin(i) : -1);
  return Dataset(geometry_, std::move(all), std::move(org));
}

void write_tensor(const fs::path& path, const ImageGeometry& geometry, const Batch& data,
                  const nlohmann::json& extra, TensorDtype dtype) {
  if (data.cols() != geometry.dims()) throw ValidationError("tensor rows do not match geometry");
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["n"] = data.rows();
  header["w"] = geometry.width;
  header["h"] = geometry.height;
  header["c"] = geometry.channels;
  header["dtype"] = dtype == TensorDtype::f64 ? "f64" : "f32";
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic.data(), kMagic.size());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (dtype == TensorDtype::f64) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    std::vector<float> buf(static_cast<std::size_t>(data.cols()));
    for (Index i = 0; i < data.rows(); ++i) {
      for (Index k = 0; k < data.cols(); ++k) buf[static_cast<std::size_t>(k)] = static_cast<float>(data(i, k));
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

TensorFile read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ValidationError("'" + path.string() + "' is not an FPMCTENS file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 30)) throw ValidationError("corrupt tensor header in '" + path.string() + "'");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated tensor header in '" + path.string() + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad tensor header in '" + path.string() + "': " + e.what());
  }
  const std::string dtype = header.value("dtype", "");
  if (dtype != "f32" && dtype != "f64") throw ValidationError("unsupported tensor dtype in '" + path.string() + "'");
  TensorFile tf;
  const Index n = header.at("n").get<Index>();
  tf.geometry = ImageGeometry(header.at("w").get<Index>(), header.at("h").get<Index>(), header.at("c").get<Index>());
  if (n < 0) throw ValidationError("negative tensor count");
  tf.data.resize(n, tf.geometry.dims());
  if (dtype == "f64") {
    in.read(reinterpret_cast<char*>(tf.data.data()), static_cast<std::streamsize>(tf.data.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated tensor data in '" + path.string() + "'");
  } else {
    std::vector<float> buf(static_cast<std::size_t>(tf.geometry.dims()));
    for (Index i = 0; i < n; ++i) {
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!in) throw ValidationError("truncated tensor data in '" + path.string() + "'");
      for (Index k = 0; k < tf.geometry.dims(); ++k) tf.data(i, k) = buf[static_cast<std::size_t>(k)];
    }
  }
  for (const char* key : {"n", "w", "h", "c", "dtype"}) header.erase(key);
  tf.extra = std::move(header);
  return tf;
}

std::uint8_t to_byte(double value) {
  const double v = std::clamp(value, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
}

double from_byte(std::uint8_t value) { return static_cast<double>(value) / 127.5 - 1.0; }

PngImage read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw ValidationError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  // Colour (incl. palette) decodes to RGB, everything else to grey.
  const bool colour = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  PngImage out;
  out.width = img.width;
  out.height = img.height;
  out.channels = colour ? 3 : 1;
  out.bytes.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ValidationError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  return out;
}

void write_png(const fs::path& path, const PngImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ValidationError("PNG export supports 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.bytes.data(), 0, nullptr)) {
    throw ValidationError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

namespace {

Dataset load_png_directory(const fs::path& dir, const ImageGeometry* expected) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("empty dataset: no PNG files in '" + dir.string() + "'");

  ImageGeometry geom;
  Batch images;
  for (std::size_t n = 0; n < files.size(); ++n) {
    const PngImage png = read_png(files[n]);
    const ImageGeometry g(png.width, png.height, png.channels);
    if (n == 0) {
      geom = g;
      if (expected && !(*expected == geom)) {
        throw ValidationError("geometry mismatch: '" + files[n].string() + "' is " + geom.to_string() +
                              ", expected " + expected->to_string());
      }
      images.resize(static_cast<Index>(files.size()), geom.dims());
    } else if (!(g == geom)) {
      throw ValidationError("geometry mismatch: '" + files[n].string() + "' is " + g.to_string() + ", expected " +
                            geom.to_string());
    }
    for (Index k = 0; k < geom.dims(); ++k) images(static_cast<Index>(n), k) = from_byte(png.bytes[static_cast<std::size_t>(k)]);
  }
  return Dataset(geom, std::move(images));
}

}  // namespace

Dataset load_dataset(const fs::path& path, const ImageGeometry* expected) {
  if (!fs::exists(path)) throw ValidationError("dataset path '" + path.string() + "' does not exist");
  if (fs::is_directory(path)) return load_png_directory(path, expected);
  if (path.extension() == ".png") {
    const PngImage png = read_png(path);
    const ImageGeometry g(png.width, png.height, png.channels);
    if (expected && !(*expected == g)) {
      throw ValidationError("geometry mismatch: '" + path.string() + "' is " + g.to_string() + ", expected " +
                            expected->to_string());
    }
    Batch row(1, g.dims());
    for (Index k = 0; k < g.dims(); ++k) row(0, k) = from_byte(png.bytes[static_cast<std::size_t>(k)]);
    return Dataset(g, std::move(row));
  }
  TensorFile tf = read_tensor(path);
  if (expected && !(*expected == tf.geometry)) {
    throw ValidationError("geometry mismatch: '" + path.string() + "' is " + tf.geometry.to_string() +
                          ", expected " + expected->to_string());
  }
  if (tf.data.rows() == 0) throw ValidationError("empty dataset: '" + path.string() + "' holds no images");
  std::vector<std::int64_t> origin;
  if (tf.extra.contains("origin")) origin = tf.extra["origin"].get<std::vector<std::int64_t>>();
  return Dataset(tf.geometry, std::move(tf.data), std::move(origin));
}

void save_dataset(const fs::path& path, const Dataset& data, TensorDtype dtype) {
  nlohmann::json extra = nlohmann::json::object();
  if (data.has_origin()) extra["origin"] = data.origins();
  write_tensor(path, data.geometry(), data.images(), extra, dtype);
}

void write_image_png(const fs::path& path, const ImageGeometry& geometry, const Eigen::Ref<const Vec>& image) {
  if (image.size() != geometry.dims()) throw ValidationError("image does not match geometry");
  PngImage png{geometry.width, geometry.height, geometry.channels, {}};
  png.bytes.resize(static_cast<std::size_t>(geometry.dims()));
  for (Index k = 0; k < geometry.dims(); ++k) png.bytes[static_cast<std::size_t>(k)] = to_byte(image[k]);
  write_png(path, png);
}

void write_contact_sheet(const fs::path& path, const ImageGeometry& geometry, const Batch& images, Index columns) {
  if (images.rows() == 0) throw ValidationError("no images for contact sheet");
  columns = std::max<Index>(1, std::min(columns, images.rows()));
  const Index rows = (images.rows() + columns - 1) / columns;
  const Index tile_w = geometry.width + 1;
  const Index tile_h = geometry.height + 1;
  PngImage png{columns * tile_w - 1, rows * tile_h - 1, geometry.channels, {}};
  png.bytes.assign(static_cast<std::size_t>(png.width * png.height * png.channels), 0);
  for (Index n = 0; n < images.rows(); ++n) {
    const Index ox = (n % columns) * tile_w;
    const Index oy = (n / columns) * tile_h;
    for (Index y = 0; y < geometry.height; ++y) {
      for (Index x = 0; x < geometry.width; ++x) {
        for (Index c = 0; c < geometry.channels; ++c) {
          const Index dst = ((oy + y) * png.width + (ox + x)) * png.channels + c;
          png.bytes[static_cast<std::size_t>(dst)] = to_byte(images(n, geometry.flat(x, y, c)));
        }
      }
    }
  }
  write_png(path, png);
}

}  // namespace fpmc
