#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fpmc/augment.hpp"
#include "fpmc/constructors.hpp"
#include "fpmc/eval.hpp"
#include "fpmc/finetune.hpp"
#include "fpmc/model_io.hpp"
#include "fpmc/parallel.hpp"
#include "fpmc/sampler.hpp"

namespace py = pybind11;
using namespace fpmc;

namespace {

using DatasetHandle = std::shared_ptr<Dataset>;
using ModelHandle = std::shared_ptr<FpmcModel>;
using DenoiserHandle = std::shared_ptr<Denoiser>;

template <class T>
std::shared_ptr<T> unconst(std::shared_ptr<const T> p) {
  return std::const_pointer_cast<T>(std::move(p));
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

// Python callable (z, t) -> array; reacquires the GIL for each call.
DenoiserHandle py_denoiser(py::function fn, std::string label) {
  auto holder = std::shared_ptr<py::function>(new py::function(std::move(fn)), [](py::function* f) {
    py::gil_scoped_acquire gil;
    delete f;
  });
  return std::make_shared<CallbackDenoiser>(
      [holder](const Batch& z, double t) {
        py::gil_scoped_acquire gil;
        return (*holder)(z, t).cast<Batch>();
      },
      std::move(label));
}

ScheduleTable patch_table(const py::object& sizes, const DiffusionSchedule& sched) {
  if (py::isinstance<py::int_>(sizes)) {
    return ScheduleTable::constant(ScheduleTable::Kind::PatchSize, sched.t_grid(), sizes.cast<int>());
  }
  return sizes.cast<ScheduleTable>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Analytic diffusion denoisers built from filtered posterior means over image datasets.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("set_num_threads", &set_num_threads, py::arg("n"));
  m.def("num_threads", &num_threads);

  py::class_<ImageGeometry>(m, "ImageGeometry")
      .def(py::init<Index, Index, Index>(), py::arg("width"), py::arg("height"), py::arg("channels") = 1)
      .def_readonly("width", &ImageGeometry::width)
      .def_readonly("height", &ImageGeometry::height)
      .def_readonly("channels", &ImageGeometry::channels)
      .def_property_readonly("dims", &ImageGeometry::dims)
      .def_static("parse", &ImageGeometry::parse)
      .def("__eq__", [](const ImageGeometry& a, const ImageGeometry& b) { return a == b; })
      .def("__repr__", [](const ImageGeometry& g) { return "ImageGeometry(" + g.to_string() + ")"; });

  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def_static("edm", &DiffusionSchedule::edm, py::arg("t_grid"))
      .def_property_readonly("t_grid", &DiffusionSchedule::t_grid)
      .def("alpha", &DiffusionSchedule::alpha)
      .def("sigma", &DiffusionSchedule::sigma)
      .def("find_step", &DiffusionSchedule::find_step)
      .def("__len__", &DiffusionSchedule::num_steps);
  m.def("edm_time_grid", &edm_time_grid, py::arg("num_steps") = 18, py::arg("t_min") = 0.002, py::arg("t_max") = 80.0,
        py::arg("rho") = 7.0);

  py::class_<Dataset, DatasetHandle>(m, "Dataset")
      .def(py::init([](const ImageGeometry& g, Batch images, std::vector<std::int64_t> origin) {
             return std::make_shared<Dataset>(g, std::move(images), std::move(origin));
           }),
           py::arg("geometry"), py::arg("images"), py::arg("origin") = std::vector<std::int64_t>{})
      .def_property_readonly("geometry", &Dataset::geometry)
      .def_property_readonly("images", &Dataset::images)
      .def_property_readonly("origins", [](const Dataset& d) {
        std::vector<std::int64_t> o;
        for (Index i = 0; i < d.size(); ++i) o.push_back(d.origin(i));
        return o;
      })
      .def("__len__", &Dataset::size);
  m.def(
      "load_dataset",
      [](const std::filesystem::path& p, std::optional<ImageGeometry> g) {
        return std::make_shared<Dataset>(load_dataset(p, g ? &*g : nullptr));
      },
      py::arg("path"), py::arg("geometry") = std::nullopt);
  m.def(
      "save_dataset", [](const std::filesystem::path& p, const Dataset& d) { save_dataset(p, d); }, py::arg("path"),
      py::arg("data"));

  m.def("optimal_denoiser", &optimal_denoiser, py::arg("z"), py::arg("t"), py::arg("data"), py::arg("schedule"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<WienerModel>(m, "WienerModel")
      .def_readonly("mean", &WienerModel::mean)
      .def_readonly("eigvals", &WienerModel::eigvals)
      .def_readonly("eigvecs", &WienerModel::eigvecs)
      .def("covariance", &wiener_covariance)
      .def("matrix", [](const WienerModel& w, double t, const DiffusionSchedule& s) { return wiener_matrix(w, t, s); });
  m.def("fit_wiener", &fit_wiener, py::arg("data"));
  m.def("wiener_denoise", &wiener_denoise, py::arg("z"), py::arg("t"), py::arg("model"), py::arg("schedule"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<ScheduleTable>(m, "ScheduleTable")
      .def_static("builtin", &ScheduleTable::builtin, py::arg("dataset"), py::arg("method"))
      .def_static("patch_sizes", [](const std::vector<double>& grid, double s) {
        return ScheduleTable::constant(ScheduleTable::Kind::PatchSize, grid, s);
      })
      .def_static("thresholds", [](const std::vector<double>& grid, double tau) {
        return ScheduleTable::constant(ScheduleTable::Kind::Threshold, grid, tau);
      })
      .def_static("load", &ScheduleTable::load)
      .def("save", &ScheduleTable::save)
      .def("patch_size", &ScheduleTable::patch_size)
      .def("tau", &ScheduleTable::tau)
      .def("to_json", [](const ScheduleTable& s) { return to_py(s.to_json()); })
      .def("__len__", &ScheduleTable::size);

  py::class_<FpmcModel, ModelHandle>(m, "FpmcModel")
      .def_property_readonly("geometry", &FpmcModel::geometry)
      .def_property_readonly("schedule", &FpmcModel::schedule)
      .def("__len__", &FpmcModel::num_steps)
      .def("num_estimators", [](const FpmcModel& f, std::size_t i) { return f.step(i).size(); })
      .def("Q", [](const FpmcModel& f, std::size_t i) { return f.step(i).Q; })
      .def("R", [](const FpmcModel& f, std::size_t i) { return f.step(i).R; })
      .def("t", [](const FpmcModel& f, std::size_t i) { return f.step(i).t; })
      .def(
          "denoise", [](const FpmcModel& f, const Batch& z, std::size_t step) { return fpmc_denoise(z, step, f); },
          py::arg("z"), py::arg("step"), py::call_guard<py::gil_scoped_release>())
      .def(
          "save",
          [](const FpmcModel& f, const std::filesystem::path& dir, const DatasetHandle& base, const std::string& method) {
            save_fpmc_model(dir, f, base, {{"method", method}});
          },
          py::arg("dir"), py::arg("base"), py::arg("method") = "fpmc");

  auto wrap = [](FpmcModel model) { return std::make_shared<FpmcModel>(std::move(model)); };
  m.def(
      "build_pspc_square",
      [wrap](const py::object& sizes, const DatasetHandle& d, const DiffusionSchedule& s, bool clamp) {
        return wrap(build_pspc_square(patch_table(sizes, s), d, s, clamp));
      },
      py::arg("sizes"), py::arg("data"), py::arg("schedule"), py::arg("clamp") = false);
  m.def(
      "build_ls",
      [wrap](const py::object& sizes, const DatasetHandle& d, const DiffusionSchedule& s) {
        return wrap(build_ls(patch_table(sizes, s), d, s));
      },
      py::arg("sizes"), py::arg("data"), py::arg("schedule"));
  m.def(
      "build_els",
      [wrap](const py::object& sizes, const DatasetHandle& d, const DiffusionSchedule& s) {
        return wrap(build_els(patch_table(sizes, s), d, s));
      },
      py::arg("sizes"), py::arg("data"), py::arg("schedule"));
  m.def(
      "build_lukoianov",
      [wrap](const DatasetHandle& d, const DiffusionSchedule& s, double tau) {
        return wrap(build_lukoianov(fit_wiener(*d), tau, d, s));
      },
      py::arg("data"), py::arg("schedule"), py::arg("tau") = 0.05);
  m.def(
      "build_pspc_flex_bumps",
      [wrap](const DatasetHandle& d, const DiffusionSchedule& s, double tau, double min_width) {
        const SensitivityMap maps = synthetic_bump_maps(d->geometry(), s.t_grid(), min_width);
        return wrap(build_pspc_flex(maps, ScheduleTable::constant(ScheduleTable::Kind::Threshold, s.t_grid(), tau), d, s));
      },
      py::arg("data"), py::arg("schedule"), py::arg("tau"), py::arg("min_width") = 0.5);
  m.def(
      "build_full_image", [wrap](const DatasetHandle& d, const DiffusionSchedule& s) { return wrap(build_full_image(d, s)); },
      py::arg("data"), py::arg("schedule"));

  py::class_<Denoiser, DenoiserHandle>(m, "Denoiser")
      .def("__call__", &Denoiser::denoise, py::arg("z"), py::arg("t"), py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("name", &Denoiser::name);
  m.def(
      "optimal", [](const DatasetHandle& d, const DiffusionSchedule& s) -> DenoiserHandle {
        return std::make_shared<OptimalDenoiser>(d, s);
      },
      py::arg("data"), py::arg("schedule"));
  m.def(
      "wiener", [](const WienerModel& w, const DiffusionSchedule& s) -> DenoiserHandle {
        return std::make_shared<WienerDenoiser>(w, s);
      },
      py::arg("model"), py::arg("schedule"));
  m.def(
      "fpmc", [](const ModelHandle& f, const std::string& label) -> DenoiserHandle {
        return std::make_shared<FpmcDenoiser>(f, label);
      },
      py::arg("model"), py::arg("label") = "fpmc");
  m.def("callback", &py_denoiser, py::arg("fn"), py::arg("label") = "callback");

  m.def(
      "load_model",
      [](const std::filesystem::path& dir) {
        const LoadedModel lm = load_model(dir);
        py::dict out;
        out["kind"] = lm.kind;
        out["denoiser"] = unconst(lm.denoiser);
        out["data"] = unconst(lm.data);
        out["schedule"] = *lm.schedule;
        out["model"] = lm.fpmc ? py::cast(unconst(lm.fpmc)) : py::none();
        out["manifest"] = to_py(lm.manifest);
        return out;
      },
      py::arg("dir"));

  m.def(
      "heun_sample",
      [](const DenoiserHandle& den, const DiffusionSchedule& s, const ImageGeometry& g, Index n, std::uint64_t seed) {
        CountingDenoiser counted(den);
        SampleResult r;
        {
          py::gil_scoped_release release;
          r = heun_sample({s, seed, n, false}, counted, g);
        }
        py::dict out;
        out["x"] = r.x;
        out["z0"] = r.z0;
        out["calls"] = counted.calls();
        return out;
      },
      py::arg("denoiser"), py::arg("schedule"), py::arg("geometry"), py::arg("n"), py::arg("seed") = 0);

  py::class_<FinetuneConfig>(m, "FinetuneConfig")
      .def(py::init<>())
      .def_readwrite("loss_weight", &FinetuneConfig::loss_weight)
      .def_property(
          "learning_rate", [](const FinetuneConfig& c) { return c.adam.learning_rate; },
          [](FinetuneConfig& c, double v) { c.adam.learning_rate = v; })
      .def_property(
          "weight_decay", [](const FinetuneConfig& c) { return c.adam.weight_decay; },
          [](FinetuneConfig& c, double v) { c.adam.weight_decay = v; })
      .def_readwrite("batch_size", &FinetuneConfig::batch_size)
      .def_readwrite("max_steps", &FinetuneConfig::max_steps)
      .def_readwrite("mc_support_size", &FinetuneConfig::mc_support_size)
      .def_readwrite("seed", &FinetuneConfig::seed)
      .def_readwrite("leave_batch_out", &FinetuneConfig::leave_batch_out)
      .def_readwrite("validation_size", &FinetuneConfig::validation_size)
      .def_property(
          "mode", [](const FinetuneConfig& c) { return to_string(c.mode); },
          [](FinetuneConfig& c, const std::string& v) { c.mode = parse_finetune_mode(v); })
      .def_property(
          "validation", [](const FinetuneConfig& c) { return unconst(c.validation); },
          [](FinetuneConfig& c, const DatasetHandle& d) { c.validation = d; });

  m.def(
      "finetune",
      [](const ModelHandle& model, std::size_t step, const DenoiserHandle& target, const DatasetHandle& train,
         const FinetuneConfig& cfg) {
        FinetuneResult r;
        {
          py::gil_scoped_release release;
          r = finetune_run(*model, step, *target, train, cfg);
        }
        py::dict out;
        out["model"] = std::make_shared<FpmcModel>(model->with_step(step, r.step));
        out["baseline_val_mse"] = r.baseline_val_mse;
        out["best_val_mse"] = r.best_val_mse;
        out["best_step"] = r.best_step;
        py::list log;
        for (const auto& rec : r.log) log.append(to_py(rec));
        out["log"] = log;
        return out;
      },
      py::arg("model"), py::arg("step"), py::arg("target"), py::arg("train"), py::arg("config") = FinetuneConfig{});

  m.def("hflip", &hflip, py::arg("image"), py::arg("geometry"));
  m.def("vflip", &vflip, py::arg("image"), py::arg("geometry"));
  m.def("translate", &translate, py::arg("image"), py::arg("geometry"), py::arg("dx"), py::arg("dy"));
  m.def("rotate", &rotate, py::arg("image"), py::arg("geometry"), py::arg("theta"));
  m.def("scale", &scale, py::arg("image"), py::arg("geometry"), py::arg("s"));
  m.def(
      "augment",
      [](const Dataset& d, const std::string& strategy, double fraction, Index pool, std::uint64_t seed) {
        AugmentResult r = build_augmented(d, {parse_strategy(strategy), fraction, pool, seed});
        py::list labels;
        for (const auto& l : r.labels) labels.append(to_py(l.to_json()));
        return py::make_tuple(std::make_shared<Dataset>(std::move(r.data)), labels);
      },
      py::arg("data"), py::arg("strategy"), py::arg("fraction") = 1.0, py::arg("pool") = 20, py::arg("seed") = 0);

  m.def(
      "sample_similarity",
      [](const Batch& a, const Batch& b) { return to_py(sample_similarity(a, b).to_json()); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "error_sweep",
      [](const DenoiserHandle& den, const DenoiserHandle& target, const Dataset& data, const DiffusionSchedule& s,
         Index n_per_t, std::uint64_t seed) {
        SweepResult r;
        {
          py::gil_scoped_release release;
          r = denoiser_error_sweep(*den, *target, data, s, s.t_grid(), n_per_t, seed);
        }
        return to_py(r.to_json());
      },
      py::arg("denoiser"), py::arg("target"), py::arg("data"), py::arg("schedule"), py::arg("n_per_t") = 256,
      py::arg("seed") = 0);
}
