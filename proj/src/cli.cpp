#include "fpmc/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fpmc/augment.hpp"
#include "fpmc/constructors.hpp"
#include "fpmc/digest.hpp"
#include "fpmc/eval.hpp"
#include "fpmc/finetune.hpp"
#include "fpmc/model_io.hpp"
#include "fpmc/parallel.hpp"
#include "fpmc/sampler.hpp"

#ifndef FPMC_VERSION
#define FPMC_VERSION "dev"
#endif

namespace fpmc {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Digest of a file, or of a directory as the sorted list of (path, digest).
std::string digest_path(const fs::path& p) {
  if (!fs::is_directory(p)) return sha256_file(p);
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    entries.emplace_back(fs::relative(e.path(), p).generic_string(), sha256_file(e.path()));
  }
  std::sort(entries.begin(), entries.end());
  std::string text;
  for (const auto& [name, digest] : entries) text += name + "  " + digest + "\n";
  return sha256_hex(text.data(), text.size());
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json parse_scalar(const std::string& s) {
  json j = json::parse(s, nullptr, false);
  if (j.is_discarded() || j.is_object() || j.is_array()) return s;
  return j;
}

// Resolved option values of a subcommand, defaults included.
json resolved_config(const CLI::App& app) {
  json cfg = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    if (opt->get_expected_max() == 0) {
      cfg[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& res = opt->results();
      if (opt->get_expected_max() > 1) {
        json arr = json::array();
        for (const auto& r : res) arr.push_back(parse_scalar(r));
        cfg[name] = arr;
      } else {
        cfg[name] = parse_scalar(res.back());
      }
    } else {
      const std::string def = opt->get_default_str();
      cfg[name] = def.empty() ? json(nullptr) : parse_scalar(def);
    }
  }
  return cfg;
}

class RunRecord {
 public:
  RunRecord(std::string command, const CLI::App& app) : command_(std::move(command)), config_(resolved_config(app)) {}

  void input(const std::string& role, const fs::path& p) { inputs_[role] = {{"path", p.string()}, {"sha256", digest_path(p)}}; }
  void output(const std::string& role, const fs::path& p) { outputs_[role] = {{"path", p.string()}, {"sha256", digest_path(p)}}; }
  void seed(const std::string& role, std::uint64_t s) { seeds_[role] = s; }
  json& info() { return info_; }

  void write(const fs::path& dir) const {
    json m = {{"command", command_},
              {"fpmc_version", FPMC_VERSION},
              {"config", config_},
              {"seeds", seeds_},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"created_utc", utc_now()}};
    if (!info_.empty()) m["results"] = info_;
    write_text_file(dir / "run_manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  json config_;
  json inputs_ = json::object();
  json outputs_ = json::object();
  json seeds_ = json::object();
  json info_ = json::object();
};

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;
};

void add_common(CLI::App* sub, Common& c, bool needs_out = true) {
  sub->add_option("--config", c.config, "JSON file of option values; command-line flags take precedence");
  auto* out = sub->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads (0: FPMC_THREADS or all cores)")->capture_default_str();
}

void apply_threads(const Common& c) {
  if (c.threads < 0) throw ValidationError("--threads must be >= 0");
  if (c.threads > 0) set_num_threads(c.threads);
}

fs::path prepare_out(const std::string& out) {
  const fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

Dataset read_data(const std::string& path, const std::string& geometry) {
  if (geometry.empty()) return load_dataset(path);
  const ImageGeometry g = ImageGeometry::parse(geometry);
  return load_dataset(path, &g);
}

LoadedModel read_model(const std::string& dir, RunRecord& rec, const std::string& role = "model") {
  rec.input(role, dir);
  return load_model(dir);
}

// ---------------------------------------------------------------- build

struct BuildArgs {
  Common common;
  std::string method, data, geometry, reference, schedule_table, maps;
  std::size_t steps = 18;
  double t_min = 0.002, t_max = 80.0, rho = 7.0;
  int patch_size = 0;
  double tau = -1.0;
  bool bump_maps = false;
  double bump_min_width = 0.5;
  bool clamp = false;
};

ScheduleTable resolve_table(const BuildArgs& a, ScheduleTable::Kind kind, const std::vector<double>& grid,
                            RunRecord& rec) {
  if (!a.schedule_table.empty()) {
    rec.input("schedule_table", a.schedule_table);
    return ScheduleTable::load(a.schedule_table);
  }
  if (kind == ScheduleTable::Kind::PatchSize && a.patch_size > 0) {
    return ScheduleTable::constant(kind, grid, a.patch_size);
  }
  if (kind == ScheduleTable::Kind::Threshold && a.tau >= 0.0) return ScheduleTable::constant(kind, grid, a.tau);
  if (!a.reference.empty()) return ScheduleTable::builtin(a.reference, a.method);
  throw ValidationError(a.method + " needs --schedule-table, --reference or a constant " +
                        (kind == ScheduleTable::Kind::PatchSize ? "--patch-size" : "--tau"));
}

void cmd_build(const BuildArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("build", app);
  rec.input("data", a.data);
  auto data = std::make_shared<const Dataset>(read_data(a.data, a.geometry));
  std::vector<double> grid;
  if (!a.reference.empty()) {
    grid = edm_time_grid(a.reference == "cifar10" ? 18 : 40, 0.002, 80.0, 7.0);
  } else {
    grid = edm_time_grid(a.steps, a.t_min, a.t_max, a.rho);
  }
  const auto sched = DiffusionSchedule::edm(grid);
  const fs::path out = prepare_out(a.common.out);
  json info = {{"method", a.method}};

  if (a.method == "optimal") {
    save_optimal_model(out, data, sched, info);
  } else if (a.method == "wiener") {
    save_wiener_model(out, fit_wiener(*data), data, sched, info);
  } else if (a.method == "lukoianov") {
    const double tau = a.tau >= 0.0 ? a.tau : 0.05;
    info["hyperparameters"] = {{"tau", tau}};
    save_fpmc_model(out, build_lukoianov(fit_wiener(*data), tau, data, sched), data, info);
  } else if (a.method == "pspc-flex") {
    std::optional<SensitivityMap> maps;
    if (!a.maps.empty()) {
      rec.input("maps", a.maps);
      maps = SensitivityMap::load(a.maps);
    } else if (a.bump_maps) {
      maps = synthetic_bump_maps(data->geometry(), grid, a.bump_min_width);
    } else {
      throw ValidationError("pspc-flex needs --maps or --bump-maps");
    }
    const ScheduleTable taus = resolve_table(a, ScheduleTable::Kind::Threshold, grid, rec);
    taus.check_against(grid);
    FlexReport report;
    const FpmcModel model = build_pspc_flex(*maps, taus, data, sched, &report);
    info["hyperparameters"] = taus.to_json();
    rec.info()["pixels_missing_self"] = report.missing_self.size();
    save_fpmc_model(out, model, data, info);
  } else if (a.method == "pspc-square" || a.method == "ls" || a.method == "els") {
    const ScheduleTable sizes = resolve_table(a, ScheduleTable::Kind::PatchSize, grid, rec);
    sizes.check_against(grid);
    info["hyperparameters"] = sizes.to_json();
    FpmcModel model = a.method == "ls"    ? build_ls(sizes, data, sched)
                      : a.method == "els" ? build_els(sizes, data, sched)
                                          : build_pspc_square(sizes, data, sched, a.clamp);
    std::vector<Index> counts;
    for (std::size_t i = 0; i < model.num_steps(); ++i) counts.push_back(model.step(i).size());
    rec.info()["estimators_per_step"] = counts;
    save_fpmc_model(out, model, data, info);
  } else {
    throw ValidationError("unknown method '" + a.method + "'");
  }
  rec.output("model", out / "manifest.json");
  rec.write(out);
  std::cout << "built " << a.method << " model in " << out.string() << "\n";
}

// ---------------------------------------------------------------- denoise

struct DenoiseArgs {
  Common common;
  std::string model, input;
  double t = -1.0;
  long step = -1;
};

void cmd_denoise(const DenoiseArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("denoise", app);
  const LoadedModel m = read_model(a.model, rec);
  rec.input("z", a.input);
  const TensorFile z = read_tensor(a.input);
  if (!(z.geometry == m.data->geometry())) throw ValidationError("input geometry does not match the model");
  double t = a.t;
  if (a.step >= 0) {
    if (static_cast<std::size_t>(a.step) >= m.schedule->num_steps()) throw ValidationError("--step is out of range");
    t = m.schedule->t_grid()[static_cast<std::size_t>(a.step)];
  }
  if (!(t > 0.0)) throw ValidationError("denoise needs --t > 0 or --step");
  const Batch d = m.denoiser->denoise(z.data, t);
  const fs::path out = prepare_out(a.common.out);
  write_tensor(out / "denoised.fpmc", z.geometry, d, {{"t", t}}, TensorDtype::f64);
  rec.output("denoised", out / "denoised.fpmc");
  rec.write(out);
  std::cout << "denoised " << d.rows() << " inputs at t=" << t << "\n";
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  Common common;
  std::string model;
  Index n = 16;
  Index columns = 8;
};

void cmd_sample(const SampleArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  if (a.n < 1) throw ValidationError("--n must be >= 1");
  RunRecord rec("sample", app);
  const LoadedModel m = read_model(a.model, rec);
  rec.seed("prior", a.common.seed);
  const ImageGeometry g = m.data->geometry();
  const CountingDenoiser counted(m.denoiser);
  const SampleResult r = heun_sample({*m.schedule, a.common.seed, a.n, false}, counted, g);

  const fs::path out = prepare_out(a.common.out);
  write_tensor(out / "samples.fpmc", g, r.x);
  write_tensor(out / "z0.fpmc", g, r.z0, json::object(), TensorDtype::f64);
  write_contact_sheet(out / "samples.png", g, r.x, a.columns);
  rec.output("samples", out / "samples.fpmc");
  rec.output("z0", out / "z0.fpmc");
  rec.output("contact_sheet", out / "samples.png");
  const std::string z0 = sha256_batch(r.z0);
  rec.info()["z0_sha256"] = z0;
  rec.info()["denoiser_calls_per_sample"] = counted.calls();
  rec.write(out);
  std::cout << "sampled " << a.n << " images (" << counted.calls() << " denoiser calls per sample, z0 sha256 " << z0
            << ")\n";
}

// ---------------------------------------------------------------- finetune

struct FinetuneArgs {
  Common common;
  std::string model, target_data, target_model, target_table, steps, mode = "joint", validation, reference_decay;
  double lr = 0.05, weight_decay = 0.0, loss_weight = 1.0;
  Index batch_size = 256, mc_support = 0, validation_size = 0;
  long max_steps = 2000;
  bool keep_batch = false;
};

std::pair<std::size_t, std::size_t> parse_range(const std::string& text, std::size_t n) {
  if (text.empty()) return {0, n - 1};
  std::size_t first = 0, last = 0;
  try {
    const auto colon = text.find(':');
    first = std::stoul(text.substr(0, colon));
    last = colon == std::string::npos ? first : std::stoul(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("step range must look like 'k' or 'first:last', got '" + text + "'");
  }
  if (first > last || last >= n) throw ValidationError("step range " + text + " is outside [0, " + std::to_string(n - 1) + "]");
  return {first, last};
}

DenoiserPtr resolve_target(const std::string& data, const std::string& model, const std::string& table,
                           const DiffusionSchedule& sched, const ImageGeometry& g, RunRecord& rec) {
  const int given = !data.empty() + !model.empty() + !table.empty();
  if (given != 1) throw ValidationError("give exactly one of --target-data, --target-model, --target-table");
  if (!data.empty()) {
    rec.input("target_data", data);
    auto oracle = std::make_shared<const Dataset>(load_dataset(data, &g));
    return std::make_shared<OptimalDenoiser>(oracle, sched);
  }
  if (!model.empty()) {
    const LoadedModel m = read_model(model, rec, "target_model");
    if (!(m.data->geometry() == g)) throw ValidationError("target model geometry does not match");
    return m.denoiser;
  }
  const fs::path zf = table + ".z.fpmc", rf = table + ".response.fpmc";
  rec.input("target_table_z", zf);
  rec.input("target_table_response", rf);
  return std::make_shared<ResponseTableDenoiser>(ResponseTableDenoiser::load(zf, rf));
}

void cmd_finetune(const FinetuneArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("finetune", app);
  const LoadedModel m = read_model(a.model, rec);
  if (m.kind != "fpmc") throw ValidationError("finetune needs an FPMC model, got '" + m.kind + "'");
  const ImageGeometry g = m.data->geometry();
  const DenoiserPtr target = resolve_target(a.target_data, a.target_model, a.target_table, *m.schedule, g, rec);
  const auto [first, last] = parse_range(a.steps, m.fpmc->num_steps());

  FinetuneConfig cfg;
  cfg.loss_weight = a.loss_weight;
  cfg.adam.learning_rate = a.lr;
  cfg.adam.weight_decay = a.weight_decay;
  cfg.batch_size = a.batch_size;
  cfg.max_steps = a.max_steps;
  cfg.mc_support_size = a.mc_support;
  cfg.mode = parse_finetune_mode(a.mode);
  cfg.leave_batch_out = !a.keep_batch;
  cfg.validation_size = a.validation_size;
  if (!a.validation.empty()) {
    rec.input("validation", a.validation);
    cfg.validation = std::make_shared<const Dataset>(load_dataset(a.validation, &g));
  }

  const fs::path out = prepare_out(a.common.out);
  fs::create_directories(out / "logs");
  FpmcModel tuned = *m.fpmc;
  json summary = json::array();
  for (std::size_t i = first; i <= last; ++i) {
    const double t = m.schedule->t_grid()[i];
    cfg.seed = a.common.seed + i;
    if (!a.reference_decay.empty()) cfg.adam.weight_decay = reference_weight_decay(a.reference_decay, t);
    char name[32];
    std::snprintf(name, sizeof(name), "step_%03zu.jsonl", i);
    cfg.log_path = out / "logs" / name;
    const FinetuneResult r = finetune_run(tuned, i, *target, m.data, cfg);
    tuned = tuned.with_step(i, r.step);
    rec.seed("step_" + std::to_string(i), cfg.seed);
    summary.push_back({{"step", i},
                       {"t", t},
                       {"weight_decay", cfg.adam.weight_decay},
                       {"baseline_val_mse", r.baseline_val_mse},
                       {"best_val_mse", r.best_val_mse},
                       {"best_step", r.best_step}});
    std::printf("step %zu (t=%.4g): val mse %.6g -> %.6g (best at optimizer step %ld)\n", i, t, r.baseline_val_mse,
                r.best_val_mse, r.best_step);
  }
  json info = {{"method", m.manifest.value("method", std::string("fpmc"))}, {"finetuned_from", a.model},
               {"finetune", summary}};
  if (m.manifest.contains("hyperparameters")) info["hyperparameters"] = m.manifest["hyperparameters"];
  save_fpmc_model(out, tuned, m.data, info);
  rec.info()["steps"] = summary;
  rec.output("model", out / "manifest.json");
  rec.output("logs", out / "logs");
  rec.write(out);
}

// ---------------------------------------------------------------- augment

struct AugmentArgs {
  Common common;
  std::string data, geometry, strategy = "hflip", synthetic;
  double fraction = 1.0;
  Index pool = 20, count = 0;
  std::vector<std::uint64_t> synthetic_seeds, reserved_seeds;
};

void cmd_augment(const AugmentArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("augment", app);
  rec.input("data", a.data);
  const Dataset data = read_data(a.data, a.geometry);
  const fs::path out = prepare_out(a.common.out);
  if (a.strategy == "synthetic") {
    if (a.synthetic.empty()) throw ValidationError("synthetic augmentation needs --synthetic");
    rec.input("synthetic", a.synthetic);
    const ImageGeometry g = data.geometry();
    const Dataset syn = load_dataset(a.synthetic, &g);
    const Dataset merged = ingest_synthetic(data, syn, a.count, a.synthetic_seeds, a.reserved_seeds);
    save_dataset(out / "dataset.fpmc", merged);
    rec.info()["added"] = a.count;
  } else {
    rec.seed("augment", a.common.seed);
    const AugmentResult r = build_augmented(data, {parse_strategy(a.strategy), a.fraction, a.pool, a.common.seed});
    save_dataset(out / "dataset.fpmc", r.data);
    write_label_ledger(out / "labels.jsonl", r.labels);
    rec.output("labels", out / "labels.jsonl");
    rec.info()["added"] = r.labels.size();
  }
  rec.output("dataset", out / "dataset.fpmc");
  rec.write(out);
  std::cout << "augmented dataset written to " << (out / "dataset.fpmc").string() << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string samples, reference, label;
};

void cmd_eval(const EvalArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("eval", app);
  rec.input("samples", a.samples);
  rec.input("reference", a.reference);
  const TensorFile s = read_tensor(a.samples), r = read_tensor(a.reference);
  if (!(s.geometry == r.geometry)) throw ValidationError("sample and reference geometries differ");
  const ComparisonReport report = sample_similarity(s.data, r.data, a.label);
  const fs::path out = prepare_out(a.common.out);
  write_text_file(out / "report.json", report.to_json().dump(2) + "\n");
  write_text_file(out / "report.txt", report.to_text());
  rec.output("report", out / "report.json");
  rec.write(out);
  std::cout << report.to_text();
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  Common common;
  std::string model, baseline, target_data, target_model, target_table, data;
  Index n_per_t = 256;
};

void write_sweep(const fs::path& out, const std::string& stem, const SweepResult& s, RunRecord& rec) {
  write_text_file(out / (stem + ".json"), s.to_json().dump(2) + "\n");
  write_text_file(out / (stem + ".csv"), s.to_csv());
  rec.output(stem, out / (stem + ".json"));
}

void cmd_sweep(const SweepArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("sweep", app);
  const LoadedModel m = read_model(a.model, rec);
  const ImageGeometry g = m.data->geometry();
  const DenoiserPtr target = resolve_target(a.target_data, a.target_model, a.target_table, *m.schedule, g, rec);
  DatasetPtr x = m.data;
  if (!a.data.empty()) {
    rec.input("data", a.data);
    x = std::make_shared<const Dataset>(load_dataset(a.data, &g));
  }
  rec.seed("sweep", a.common.seed);
  const auto& grid = m.schedule->t_grid();
  const fs::path out = prepare_out(a.common.out);
  SweepResult variant = denoiser_error_sweep(*m.denoiser, *target, *x, *m.schedule, grid, a.n_per_t, a.common.seed);
  write_sweep(out, "sweep", variant, rec);
  std::cout << variant.to_text();
  if (!a.baseline.empty()) {
    const LoadedModel b = read_model(a.baseline, rec, "baseline");
    if (!(b.data->geometry() == g)) throw ValidationError("baseline model geometry does not match");
    const SweepResult base = denoiser_error_sweep(*b.denoiser, *target, *x, *m.schedule, grid, a.n_per_t, a.common.seed);
    write_sweep(out, "baseline_sweep", base, rec);
    const RelativeChange rc = relative_error_change(base, variant);
    write_text_file(out / "relative_change.json", rc.to_json().dump(2) + "\n");
    write_text_file(out / "relative_change.csv", rc.to_csv());
    rec.output("relative_change", out / "relative_change.json");
    std::cout << rc.to_text();
  }
  rec.write(out);
}

// ---------------------------------------------------------------- export-masks

struct ExportArgs {
  Common common;
  std::string model, which = "both";
  long step = -1;
  std::vector<Index> estimators;
};

// Min-max rescale to [0, 1]; a constant vector maps to 1 when positive.
PngImage mask_png(const Vec& v, const ImageGeometry& g) {
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  PngImage img{g.width, g.height, g.channels, std::vector<std::uint8_t>(static_cast<std::size_t>(v.size()))};
  for (Index i = 0; i < v.size(); ++i) {
    const double u = hi > lo ? (v[i] - lo) / (hi - lo) : (hi > 0.0 ? 1.0 : 0.0);
    img.bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(u, 0.0, 1.0)));
  }
  return img;
}

void cmd_export_masks(const ExportArgs& a, const CLI::App& app) {
  apply_threads(a.common);
  RunRecord rec("export-masks", app);
  const LoadedModel m = read_model(a.model, rec);
  if (m.kind != "fpmc") throw ValidationError("export-masks needs an FPMC model");
  if (a.step < 0 || static_cast<std::size_t>(a.step) >= m.fpmc->num_steps()) throw ValidationError("--step is out of range");
  if (a.which != "q" && a.which != "r" && a.which != "both") throw ValidationError("--which must be q, r or both");
  const FpmcStep& st = m.fpmc->step(static_cast<std::size_t>(a.step));
  std::vector<Index> ids = a.estimators;
  if (ids.empty()) {
    ids.resize(static_cast<std::size_t>(st.size()));
    for (Index l = 0; l < st.size(); ++l) ids[static_cast<std::size_t>(l)] = l;
  }
  const fs::path out = prepare_out(a.common.out);
  const ImageGeometry g = m.data->geometry();
  std::size_t written = 0;
  for (Index l : ids) {
    if (l < 0 || l >= st.size()) throw ValidationError("estimator " + std::to_string(l) + " is out of range");
    for (const char* kind : {"q", "r"}) {
      if (a.which != "both" && a.which != kind) continue;
      const Vec v = (kind[0] == 'q' ? st.Q : st.R).row(l).transpose();
      char name[64];
      std::snprintf(name, sizeof(name), "step_%03ld_%s_%05ld.png", a.step, kind, static_cast<long>(l));
      write_png(out / name, mask_png(v, g));
      ++written;
    }
  }
  rec.info()["images"] = written;
  rec.write(out);
  std::cout << "wrote " << written << " mask images to " << out.string() << "\n";
}

// ---------------------------------------------------------------- config handling

std::string option_name(const std::string& token) {
  if (token.rfind("--", 0) != 0) return {};
  return token.substr(2, token.find('=') - 2);
}

// Inserts option values from --config after the subcommand name, skipping
// any option the user also gave on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::string path;
  std::set<std::string> given;
  for (std::size_t i = 2; i < args.size(); ++i) {
    const std::string name = option_name(args[i]);
    if (name.empty()) continue;
    given.insert(name);
    if (name == "config") {
      const auto eq = args[i].find('=');
      if (eq != std::string::npos) {
        path = args[i].substr(eq + 1);
      } else if (i + 1 < args.size()) {
        path = args[i + 1];
      }
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed config file " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw ValidationError("config file must hold a JSON object");
  std::vector<std::string> extra;
  for (const auto& [key, value] : cfg.items()) {
    if (given.count(key) || key == "config") continue;
    auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      extra.push_back("--" + key);
      for (const auto& v : value) extra.push_back(text(v));
    } else if (!value.is_null()) {
      extra.push_back("--" + key + "=" + text(value));
    }
  }
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  out.insert(out.end(), extra.begin(), extra.end());
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw) {
  CLI::App app{"Filtered posterior mean collections: analytic diffusion denoisers over image datasets", "fpmc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FPMC_VERSION);

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Construct a denoiser and save it as a model directory");
  b->add_option("method,--method", build.method, "optimal|wiener|pspc-square|pspc-flex|ls|els|lukoianov")->required();
  b->add_option("--data", build.data, "Dataset tensor file or PNG directory")->required();
  b->add_option("--geometry", build.geometry, "Expected WxHxC");
  b->add_option("--reference", build.reference, "Reference schedule set: cifar10|ffhq64|afhq64");
  b->add_option("--schedule-table", build.schedule_table, "JSON list of {step, t, s|tau}");
  b->add_option("--steps", build.steps, "Time grid size")->capture_default_str();
  b->add_option("--t-min", build.t_min)->capture_default_str();
  b->add_option("--t-max", build.t_max)->capture_default_str();
  b->add_option("--rho", build.rho)->capture_default_str();
  b->add_option("--patch-size", build.patch_size, "Constant patch size for every step");
  b->add_option("--tau", build.tau, "Constant threshold (lukoianov default 0.05)");
  b->add_option("--maps", build.maps, "Sensitivity map tensor for pspc-flex");
  b->add_flag("--bump-maps", build.bump_maps, "Use synthetic Gaussian-bump sensitivity maps");
  b->add_option("--bump-min-width", build.bump_min_width)->capture_default_str();
  b->add_flag("--clamp", build.clamp, "Reduce patch sizes larger than the image");
  add_common(b, build.common);

  DenoiseArgs den;
  auto* d = app.add_subcommand("denoise", "Apply a model to a tensor of noisy inputs");
  d->add_option("--model", den.model)->required();
  d->add_option("--input", den.input, "Tensor file of z")->required();
  d->add_option("--t", den.t, "Noise level");
  d->add_option("--step", den.step, "Grid step index (overrides --t)");
  add_common(d, den.common);

  SampleArgs smp;
  auto* s = app.add_subcommand("sample", "Draw samples with the deterministic Heun sampler");
  s->add_option("--model", smp.model)->required();
  s->add_option("--n", smp.n, "Number of samples")->capture_default_str();
  s->add_option("--columns", smp.columns, "Contact sheet width")->capture_default_str();
  add_common(s, smp.common);

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Fine-tune query precisions and response weights per step");
  f->add_option("--model", ft.model)->required();
  f->add_option("--target-data", ft.target_data, "Oracle dataset for the optimal-denoiser target");
  f->add_option("--target-model", ft.target_model, "Model directory used as the target");
  f->add_option("--target-table", ft.target_table, "Response table stem (<stem>.z.fpmc, <stem>.response.fpmc)");
  f->add_option("--step-range", ft.steps, "Steps to tune: 'k' or 'first:last' (default all)");
  f->add_option("--mode", ft.mode, "q|r|joint")->capture_default_str();
  f->add_option("--lr", ft.lr)->capture_default_str();
  f->add_option("--weight-decay", ft.weight_decay)->capture_default_str();
  f->add_option("--reference-decay", ft.reference_decay, "Per-step decay thresholds of cifar10|ffhq64|afhq64");
  f->add_option("--loss-weight", ft.loss_weight)->capture_default_str();
  f->add_option("--batch-size", ft.batch_size)->capture_default_str();
  f->add_option("--max-steps", ft.max_steps)->capture_default_str();
  f->add_option("--mc-support", ft.mc_support, "Monte Carlo support size (0: full)")->capture_default_str();
  f->add_option("--validation", ft.validation, "Held-out dataset (default: training set)");
  f->add_option("--validation-size", ft.validation_size)->capture_default_str();
  f->add_flag("--keep-batch", ft.keep_batch, "Do not mask batch images out of the source measures");
  add_common(f, ft.common);

  AugmentArgs aug;
  auto* au = app.add_subcommand("augment", "Grow a dataset with transformed or synthetic images");
  au->add_option("--data", aug.data)->required();
  au->add_option("--geometry", aug.geometry);
  au->add_option("--strategy", aug.strategy, "hflip|vflip|translate|rotate|scale|synthetic")->capture_default_str();
  au->add_option("--fraction", aug.fraction, "|D'| / |D|")->capture_default_str();
  au->add_option("--pool", aug.pool, "Candidates per image")->capture_default_str();
  au->add_option("--synthetic", aug.synthetic, "Synthetic image set");
  au->add_option("--count", aug.count, "Synthetic images to add")->capture_default_str();
  au->add_option("--synthetic-seeds", aug.synthetic_seeds, "Seeds used to generate the synthetic set");
  au->add_option("--reserved-seeds", aug.reserved_seeds, "Seeds reserved for evaluation");
  add_common(au, aug.common);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compare paired sample sets (MSE and r^2)");
  e->add_option("--samples", ev.samples)->required();
  e->add_option("--reference", ev.reference)->required();
  e->add_option("--label", ev.label);
  add_common(e, ev.common);

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Denoiser error against a target over the time grid");
  w->add_option("--model", sw.model)->required();
  w->add_option("--baseline", sw.baseline, "Second model; also writes the relative error change");
  w->add_option("--target-data", sw.target_data);
  w->add_option("--target-model", sw.target_model);
  w->add_option("--target-table", sw.target_table);
  w->add_option("--data", sw.data, "Clean images for the noisy inputs (default: model dataset)");
  w->add_option("--n-per-t", sw.n_per_t)->capture_default_str();
  add_common(w, sw.common);

  ExportArgs ex;
  auto* x = app.add_subcommand("export-masks", "Write q and r vectors of one step as PNG images");
  x->add_option("--model", ex.model)->required();
  x->add_option("--step", ex.step)->required();
  x->add_option("--which", ex.which, "q|r|both")->capture_default_str();
  x->add_option("--estimators", ex.estimators, "Estimator indices (default all)");
  add_common(x, ex.common);

  try {
    std::vector<std::string> args = expand_config(raw);
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    try {
      app.parse(rev);
    } catch (const CLI::ParseError& err) {
      const int code = app.exit(err);
      return code == 0 ? 0 : 2;
    }
    if (b->parsed()) cmd_build(build, *b);
    if (d->parsed()) cmd_denoise(den, *d);
    if (s->parsed()) cmd_sample(smp, *s);
    if (f->parsed()) cmd_finetune(ft, *f);
    if (au->parsed()) cmd_augment(aug, *au);
    if (e->parsed()) cmd_eval(ev, *e);
    if (w->parsed()) cmd_sweep(sw, *w);
    if (x->parsed()) cmd_export_masks(ex, *x);
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace fpmc
