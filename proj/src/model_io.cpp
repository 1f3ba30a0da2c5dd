#include "fpmc/model_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "fpmc/digest.hpp"

namespace fpmc {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;
const char* const kDatasetFile = "dataset.fpmc";

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

nlohmann::json geometry_json(const ImageGeometry& g) { return {{"w", g.width}, {"h", g.height}, {"c", g.channels}}; }

ImageGeometry geometry_from(const nlohmann::json& j) {
  return ImageGeometry(j.at("w").get<Index>(), j.at("h").get<Index>(), j.at("c").get<Index>());
}

std::string step_file(std::size_t step, const std::string& what) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "step_%03zu_%s.fpmc", step, what.c_str());
  return buf;
}

nlohmann::json base_manifest(const std::string& kind, const fs::path& dir, const DatasetPtr& data,
                             const DiffusionSchedule& sched, const nlohmann::json& info) {
  if (!data) throw ValidationError("model needs a dataset");
  fs::create_directories(dir);
  save_dataset(dir / kDatasetFile, *data, TensorDtype::f64);
  nlohmann::json m = info.is_object() ? info : nlohmann::json::object();
  m["format"] = "fpmc-model";
  m["version"] = kFormatVersion;
  m["kind"] = kind;
  m["geometry"] = geometry_json(data->geometry());
  m["schedule"] = schedule_to_json(sched);
  m["dataset"] = kDatasetFile;
  m["dataset_sha256"] = sha256_file(dir / kDatasetFile);
  m["dataset_size"] = data->size();
  return m;
}

// Source weights as an n x 1 tensor; omitted when uniform over all rows.
nlohmann::json save_source(const fs::path& dir, const SourceMeasure& nu, const DatasetPtr& base,
                           std::map<const Dataset*, std::string>& saved, std::size_t step, std::size_t index) {
  nlohmann::json j = nlohmann::json::object();
  const Dataset* ds = &nu.dataset();
  if (ds == base.get()) {
    j["dataset"] = "base";
  } else {
    auto it = saved.find(ds);
    if (it == saved.end()) {
      const std::string name = step_file(step, "source" + std::to_string(index) + "_data");
      save_dataset(dir / name, *ds, TensorDtype::f64);
      it = saved.emplace(ds, name).first;
    }
    j["dataset"] = it->second;
  }
  const Vec& w = nu.weights();
  const bool uniform = (w.array() == w[0]).all();
  if (uniform) {
    j["weights"] = "uniform";
  } else {
    const std::string name = step_file(step, "source" + std::to_string(index) + "_weights");
    write_tensor(dir / name, ImageGeometry(1, 1, 1), w, nlohmann::json::object(), TensorDtype::f64);
    j["weights"] = name;
  }
  return j;
}

DatasetPtr load_base(const fs::path& dir, const nlohmann::json& m) {
  const fs::path path = dir / m.at("dataset").get<std::string>();
  if (m.contains("dataset_sha256") && sha256_file(path) != m["dataset_sha256"].get<std::string>()) {
    throw ValidationError("dataset digest mismatch in " + dir.string());
  }
  const ImageGeometry g = geometry_from(m.at("geometry"));
  return std::make_shared<const Dataset>(load_dataset(path, &g));
}

}  // namespace

nlohmann::json schedule_to_json(const DiffusionSchedule& sched) {
  if (!sched.is_edm()) throw ValidationError("only the alpha=1, sigma=t schedule can be persisted");
  return {{"kind", "edm"}, {"t_grid", sched.t_grid()}};
}

DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "edm") throw ValidationError("unsupported schedule kind in manifest");
  return DiffusionSchedule::edm(j.at("t_grid").get<std::vector<double>>());
}

void save_fpmc_model(const fs::path& dir, const FpmcModel& model, const DatasetPtr& base, const nlohmann::json& info) {
  if (!(base->geometry() == model.geometry())) throw ValidationError("base dataset geometry does not match the model");
  nlohmann::json m = base_manifest("fpmc", dir, base, model.schedule(), info);
  std::map<const Dataset*, std::string> saved;
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t i = 0; i < model.num_steps(); ++i) {
    const FpmcStep& st = model.step(i);
    write_tensor(dir / step_file(i, "q"), model.geometry(), st.Q, nlohmann::json::object(), TensorDtype::f64);
    write_tensor(dir / step_file(i, "r"), model.geometry(), st.R, nlohmann::json::object(), TensorDtype::f64);
    nlohmann::json sources = nlohmann::json::array();
    for (std::size_t s = 0; s < st.sources.size(); ++s) sources.push_back(save_source(dir, st.sources[s], base, saved, i, s));
    steps.push_back({{"t", st.t},
                     {"L", st.size()},
                     {"q", step_file(i, "q")},
                     {"r", step_file(i, "r")},
                     {"sources", sources},
                     {"source_of", st.source_of}});
  }
  m["steps"] = steps;
  write_json(dir / "manifest.json", m);
}

void save_optimal_model(const fs::path& dir, const DatasetPtr& data, const DiffusionSchedule& sched,
                        const nlohmann::json& info) {
  write_json(dir / "manifest.json", base_manifest("optimal", dir, data, sched, info));
}

void save_wiener_model(const fs::path& dir, const WienerModel& model, const DatasetPtr& data,
                       const DiffusionSchedule& sched, const nlohmann::json& info) {
  nlohmann::json m = base_manifest("wiener", dir, data, sched, info);
  const Index d = model.mean.size();
  const ImageGeometry col(1, 1, 1);
  write_tensor(dir / "wiener_mean.fpmc", col, model.mean, nlohmann::json::object(), TensorDtype::f64);
  write_tensor(dir / "wiener_eigvals.fpmc", col, model.eigvals, nlohmann::json::object(), TensorDtype::f64);
  write_tensor(dir / "wiener_eigvecs.fpmc", ImageGeometry(d, 1, 1), model.eigvecs, nlohmann::json::object(),
               TensorDtype::f64);
  m["wiener"] = {{"mean", "wiener_mean.fpmc"}, {"eigvals", "wiener_eigvals.fpmc"}, {"eigvecs", "wiener_eigvecs.fpmc"}};
  write_json(dir / "manifest.json", m);
}

LoadedModel load_model(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw ValidationError("no manifest.json in " + dir.string());
  LoadedModel out;
  out.manifest = read_json(mpath);
  const auto& m = out.manifest;
  if (m.value("format", "") != "fpmc-model") throw ValidationError(dir.string() + " is not a model directory");
  out.kind = m.at("kind").get<std::string>();
  out.data = load_base(dir, m);
  out.schedule = schedule_from_json(m.at("schedule"));
  const ImageGeometry g = out.data->geometry();

  if (out.kind == "optimal") {
    out.denoiser = std::make_shared<OptimalDenoiser>(out.data, *out.schedule);
  } else if (out.kind == "wiener") {
    const auto& w = m.at("wiener");
    WienerModel wm;
    wm.mean = read_tensor(dir / w.at("mean").get<std::string>()).data.col(0);
    wm.eigvals = read_tensor(dir / w.at("eigvals").get<std::string>()).data.col(0);
    wm.eigvecs = read_tensor(dir / w.at("eigvecs").get<std::string>()).data;
    if (wm.mean.size() != g.dims() || wm.eigvecs.rows() != g.dims() || wm.eigvecs.cols() != g.dims()) {
      throw ValidationError("Wiener tensors do not match the model geometry");
    }
    out.wiener = wm;
    out.denoiser = std::make_shared<WienerDenoiser>(wm, *out.schedule);
  } else if (out.kind == "fpmc") {
    std::map<std::string, DatasetPtr> datasets{{"base", out.data}};
    std::vector<FpmcStep> steps;
    for (const auto& sj : m.at("steps")) {
      FpmcStep st;
      st.t = sj.at("t").get<double>();
      st.Q = read_tensor(dir / sj.at("q").get<std::string>()).data;
      st.R = read_tensor(dir / sj.at("r").get<std::string>()).data;
      st.source_of = sj.at("source_of").get<std::vector<std::size_t>>();
      for (const auto& src : sj.at("sources")) {
        const std::string name = src.at("dataset").get<std::string>();
        auto it = datasets.find(name);
        if (it == datasets.end()) {
          it = datasets.emplace(name, std::make_shared<const Dataset>(load_dataset(dir / name, &g))).first;
        }
        const std::string wname = src.at("weights").get<std::string>();
        if (wname == "uniform") {
          st.sources.push_back(SourceMeasure::uniform(it->second));
        } else {
          st.sources.emplace_back(it->second, read_tensor(dir / wname).data.col(0));
        }
      }
      steps.push_back(std::move(st));
    }
    out.fpmc = std::make_shared<const FpmcModel>(g, *out.schedule, std::move(steps));
    out.denoiser = std::make_shared<FpmcDenoiser>(out.fpmc, m.value("method", std::string("fpmc")));
  } else {
    throw ValidationError("unknown model kind '" + out.kind + "'");
  }
  return out;
}

}  // namespace fpmc
