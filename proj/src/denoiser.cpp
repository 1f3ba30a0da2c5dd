#include "fpmc/denoiser.hpp"

#include <cstring>

namespace fpmc {

OptimalDenoiser::OptimalDenoiser(DatasetPtr data, DiffusionSchedule schedule)
    : data_(std::move(data)), schedule_(std::move(schedule)) {
  if (!data_) throw ValidationError("optimal denoiser needs a dataset");
}

Batch OptimalDenoiser::denoise(const Batch& z, double t) const { return optimal_denoiser(z, t, *data_, schedule_); }

WienerDenoiser::WienerDenoiser(WienerModel model, DiffusionSchedule schedule)
    : model_(std::move(model)), schedule_(std::move(schedule)) {}

Batch WienerDenoiser::denoise(const Batch& z, double t) const { return wiener_denoise(z, t, model_, schedule_); }

FpmcDenoiser::FpmcDenoiser(std::shared_ptr<const FpmcModel> model, std::string label)
    : model_(std::move(model)), label_(std::move(label)) {
  if (!model_) throw ValidationError("FPMC denoiser needs a model");
}

Batch FpmcDenoiser::denoise(const Batch& z, double t) const { return fpmc_denoise(z, model_->step_for(t), *model_); }

CallbackDenoiser::CallbackDenoiser(Fn fn, std::string label) : fn_(std::move(fn)), label_(std::move(label)) {}

Batch CallbackDenoiser::denoise(const Batch& z, double t) const { return fn_(z, t); }

ResponseTableDenoiser::ResponseTableDenoiser(ImageGeometry geometry, Batch z, Batch response, std::vector<double> t)
    : geometry_(geometry), response_(std::move(response)) {
  if (z.rows() != response_.rows() || static_cast<Index>(t.size()) != z.rows()) {
    throw ValidationError("response table rows do not line up");
  }
  if (z.cols() != geometry_.dims() || response_.cols() != geometry_.dims()) {
    throw ValidationError("response table does not match geometry");
  }
  for (Index i = 0; i < z.rows(); ++i) index_[key(z.row(i).data(), t[static_cast<std::size_t>(i)])] = i;
}

ResponseTableDenoiser ResponseTableDenoiser::load(const std::filesystem::path& z_file,
                                                  const std::filesystem::path& response_file) {
  TensorFile z = read_tensor(z_file);
  TensorFile r = read_tensor(response_file);
  if (!(z.geometry == r.geometry)) throw ValidationError("response table files differ in geometry");
  if (!z.extra.contains("t")) throw ValidationError("response table z file lacks 't' in its header");
  std::vector<double> t;
  if (z.extra["t"].is_array()) {
    t = z.extra["t"].get<std::vector<double>>();
  } else {
    t.assign(static_cast<std::size_t>(z.data.rows()), z.extra["t"].get<double>());
  }
  return ResponseTableDenoiser(z.geometry, std::move(z.data), std::move(r.data), std::move(t));
}

std::string ResponseTableDenoiser::key(const double* z, double t) const {
  const Index d = geometry_.dims();
  std::string k(static_cast<std::size_t>(d + 1) * sizeof(float), '\0');
  const float tf = static_cast<float>(t);
  std::memcpy(k.data(), &tf, sizeof(float));
  for (Index i = 0; i < d; ++i) {
    const float v = static_cast<float>(z[i]);
    std::memcpy(k.data() + (i + 1) * static_cast<Index>(sizeof(float)), &v, sizeof(float));
  }
  return k;
}

Batch ResponseTableDenoiser::denoise(const Batch& z, double t) const {
  if (z.cols() != geometry_.dims()) throw ValidationError("denoiser input has wrong dimension");
  Batch out(z.rows(), z.cols());
  for (Index b = 0; b < z.rows(); ++b) {
    const auto it = index_.find(key(z.row(b).data(), t));
    if (it == index_.end()) throw ValidationError("response table has no entry for a requested (z, t)");
    out.row(b) = response_.row(it->second);
  }
  return out;
}

}  // namespace fpmc
