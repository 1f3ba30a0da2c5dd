#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fpmc/cli.hpp"
#include "fpmc/constructors.hpp"
#include "fpmc/digest.hpp"
#include "fpmc/model_io.hpp"
#include "support.hpp"

using namespace fpmc;
using namespace fpmc::testing;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / "fpmc_cli" / name) {
    fs::remove_all(root);
    fs::create_directories(root);
    std::mt19937_64 rng(42);
    const ImageGeometry g(6, 6, 1);
    save_dataset(root / "data.fpmc", Dataset(g, manifold_images(g, 12, rng)));
    save_dataset(root / "oracle.fpmc", Dataset(g, manifold_images(g, 48, rng)));
  }
  std::string operator/(const std::string& p) const { return (root / p).string(); }
};

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "fpmc");
  return run_cli(args);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json without_time(json m) {
  m.erase("created_utc");
  return m;
}

}  // namespace

TEST_CASE("exit codes") {
  Workspace w("codes");
  CHECK(run({"build", "optimal", "--data", w / "data.fpmc", "--out", w / "opt"}) == 0);
  CHECK(read_json(w / "opt/manifest.json")["kind"] == "optimal");
  CHECK(run({"build", "ls", "--data", w / "data.fpmc", "--out", w / "x"}) == 2);
  CHECK(run({"build", "pspc-square", "--data", w / "missing.fpmc", "--patch-size", "3", "--out", w / "x"}) == 2);
  CHECK(run({"sample", "--n", "2"}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"build", "pspc-square", "--data", w / "data.fpmc", "--patch-size", "9", "--out", w / "x"}) == 2);

  // Huge precisions at the smallest t overflow every posterior log-weight.
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--patch-size", "3", "--steps", "4", "--out",
               w / "ps"}) == 0);
  const fs::path q = w.root / "ps/step_003_q.fpmc";
  TensorFile tq = read_tensor(q);
  tq.data *= 1e306;
  write_tensor(q, tq.geometry, tq.data, tq.extra, TensorDtype::f64);
  std::mt19937_64 rng(1);
  write_tensor(w.root / "z.fpmc", ImageGeometry(6, 6, 1), gaussian_batch(2, 36, rng));
  CHECK(run({"denoise", "--model", w / "ps", "--input", w / "z.fpmc", "--step", "3", "--out", w / "dz"}) == 3);
}

TEST_CASE("build and denoise round trip") {
  Workspace w("roundtrip");
  REQUIRE(run({"build", "els", "--data", w / "data.fpmc", "--patch-size", "3", "--steps", "5", "--out", w / "els"}) == 0);
  std::mt19937_64 rng(2);
  const Batch z = gaussian_batch(3, 36, rng);
  write_tensor(w.root / "z.fpmc", ImageGeometry(6, 6, 1), z, json::object(), TensorDtype::f64);
  REQUIRE(run({"denoise", "--model", w / "els", "--input", w / "z.fpmc", "--step", "2", "--out", w / "d"}) == 0);
  const Batch got = read_tensor(w.root / "d/denoised.fpmc").data;

  auto data = std::make_shared<const Dataset>(load_dataset(w.root / "data.fpmc"));
  const auto sched = DiffusionSchedule::edm(edm_time_grid(5, 0.002, 80.0, 7.0));
  const FpmcModel mem = build_els(ScheduleTable::constant(ScheduleTable::Kind::PatchSize, sched.t_grid(), 3), data, sched);
  CHECK(max_abs(got - fpmc_denoise(z, 2, mem)) <= 1e-12);

  const json m = read_json(w.root / "els/manifest.json");
  CHECK(m["method"] == "els");
  CHECK(m["hyperparameters"].size() == 5);
  CHECK(m["dataset_sha256"] == sha256_file(w.root / "els/dataset.fpmc"));
  const json run_m = read_json(w.root / "els/run_manifest.json");
  CHECK(run_m["inputs"]["data"]["sha256"] == sha256_file(w.root / "data.fpmc"));
  CHECK(run_m["config"]["patch-size"] == 3);
}

TEST_CASE("reference schedules and idempotent manifests") {
  Workspace w("reference");
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--reference", "cifar10", "--clamp", "--out",
               w / "a"}) == 0);
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--reference", "cifar10", "--clamp", "--out",
               w / "b"}) == 0);
  const json a = read_json(w.root / "a/run_manifest.json"), b = read_json(w.root / "b/run_manifest.json");
  CHECK(a["results"]["estimators_per_step"].size() == 18);
  CHECK(a["outputs"]["model"]["sha256"] == b["outputs"]["model"]["sha256"]);
  json ja = without_time(a), jb = without_time(b);
  ja["config"].erase("out");
  jb["config"].erase("out");
  ja.erase("outputs");
  jb.erase("outputs");
  CHECK(ja == jb);
  CHECK(run({"build", "lukoianov", "--data", w / "data.fpmc", "--steps", "4", "--out", w / "luk"}) == 0);
  CHECK(read_json(w.root / "luk/manifest.json")["hyperparameters"]["tau"] == 0.05);
  CHECK(run({"build", "pspc-flex", "--data", w / "data.fpmc", "--steps", "4", "--bump-maps", "--tau", "0.9", "--out",
             w / "flex"}) == 0);
  CHECK(run({"build", "pspc-flex", "--data", w / "data.fpmc", "--steps", "4", "--tau", "0.9", "--out", w / "x"}) == 2);
}

TEST_CASE("sampling with a shared seed") {
  Workspace w("sample");
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--reference", "cifar10", "--clamp", "--out",
               w / "ps"}) == 0);
  REQUIRE(run({"build", "wiener", "--data", w / "data.fpmc", "--reference", "cifar10", "--out", w / "wi"}) == 0);
  REQUIRE(run({"sample", "--model", w / "ps", "--n", "3", "--seed", "9", "--out", w / "s1"}) == 0);
  REQUIRE(run({"sample", "--model", w / "wi", "--n", "3", "--seed", "9", "--out", w / "s2"}) == 0);
  const json m1 = read_json(w.root / "s1/run_manifest.json"), m2 = read_json(w.root / "s2/run_manifest.json");
  CHECK(m1["results"]["z0_sha256"] == m2["results"]["z0_sha256"]);
  CHECK(m1["results"]["denoiser_calls_per_sample"] == 35);
  CHECK(m1["seeds"]["prior"] == 9);
  const PngImage sheet = read_png(w.root / "s1/samples.png");
  CHECK(sheet.width == 3 * 6 + 2);
  REQUIRE(run({"sample", "--model", w / "ps", "--n", "3", "--seed", "9", "--out", w / "s3"}) == 0);
  CHECK(slurp(w.root / "s1/samples.fpmc") == slurp(w.root / "s3/samples.fpmc"));

  REQUIRE(run({"sample", "--model", w / "ps", "--n", "1", "--out", w / "one"}) == 0);
  CHECK(fs::exists(w.root / "one/samples.png"));

  REQUIRE(run({"eval", "--samples", w / "s1/samples.fpmc", "--reference", w / "s1/samples.fpmc", "--out", w / "ev"}) == 0);
  const json rep = read_json(w.root / "ev/report.json");
  CHECK(rep["mse"]["mean"] == 0.0);
}

TEST_CASE("fine-tuning commands") {
  Workspace w("finetune");
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--patch-size", "3", "--steps", "6", "--out",
               w / "base"}) == 0);
  SUBCASE("zero optimizer steps copies the baseline") {
    REQUIRE(run({"finetune", "--model", w / "base", "--target-data", w / "oracle.fpmc", "--step-range", "2",
                 "--max-steps", "0", "--out", w / "ft0"}) == 0);
    const LoadedModel a = load_model(w.root / "base"), b = load_model(w.root / "ft0");
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(max_abs(a.fpmc->step(i).Q - b.fpmc->step(i).Q) == 0.0);
      CHECK(max_abs(a.fpmc->step(i).R - b.fpmc->step(i).R) == 0.0);
    }
  }
  SUBCASE("reruns reproduce logs; config file with flag override") {
    {
      std::ofstream cfg(w.root / "ft.json");
      cfg << R"({"mode": "q", "max-steps": 6, "batch-size": 4, "lr": 0.5, "step-range": "2:3"})";
    }
    for (const char* out : {"r1", "r2"}) {
      REQUIRE(run({"finetune", "--model", w / "base", "--target-data", w / "oracle.fpmc", "--config", w / "ft.json",
                   "--lr", "0.1", "--seed", "5", "--out", w / out}) == 0);
    }
    CHECK(slurp(w.root / "r1/logs/step_002.jsonl") == slurp(w.root / "r2/logs/step_002.jsonl"));
    CHECK(slurp(w.root / "r1/step_003_q.fpmc") == slurp(w.root / "r2/step_003_q.fpmc"));
    const json m = read_json(w.root / "r1/run_manifest.json");
    CHECK(m["config"]["lr"] == 0.1);
    CHECK(m["config"]["mode"] == "q");
    CHECK(m["seeds"]["step_3"] == 8);
    const LoadedModel a = load_model(w.root / "base"), b = load_model(w.root / "r1");
    CHECK(max_abs(a.fpmc->step(0).Q - b.fpmc->step(0).Q) == 0.0);
    CHECK(max_abs(a.fpmc->step(2).R - b.fpmc->step(2).R) == 0.0);

    REQUIRE(run({"export-masks", "--model", w / "r1", "--step", "2", "--which", "q", "--estimators", "14", "--out",
                 w / "soft"}) == 0);
    const PngImage soft = read_png(w.root / "soft/step_002_q_00014.png");
    CHECK(*std::max_element(soft.bytes.begin(), soft.bytes.end()) == 255);
  }
  CHECK(run({"finetune", "--model", w / "base", "--step-range", "2", "--out", w / "x"}) == 2);
  CHECK(run({"finetune", "--model", w / "base", "--target-data", w / "oracle.fpmc", "--step-range", "7", "--out",
             w / "x"}) == 2);
}

TEST_CASE("mask export of square patches") {
  Workspace w("masks");
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--patch-size", "3", "--steps", "3", "--out",
               w / "ps"}) == 0);
  REQUIRE(run({"export-masks", "--model", w / "ps", "--step", "1", "--estimators", "0", "7", "--out", w / "m"}) == 0);
  const PngImage q = read_png(w.root / "m/step_001_q_00007.png");
  CHECK(q.width == 6);
  Index white = 0;
  for (auto v : q.bytes) {
    CHECK((v == 0 || v == 255));
    white += v == 255;
  }
  CHECK(white == 9);
  CHECK(fs::exists(w.root / "m/step_001_r_00000.png"));
}

TEST_CASE("augment then sweep") {
  Workspace w("augment");
  REQUIRE(run({"augment", "--data", w / "data.fpmc", "--strategy", "hflip", "--fraction", "1", "--out", w / "aug"}) == 0);
  const Dataset aug = load_dataset(w.root / "aug/dataset.fpmc");
  CHECK(aug.size() == 24);
  REQUIRE(run({"build", "pspc-square", "--data", w / "data.fpmc", "--patch-size", "3", "--steps", "6", "--out",
               w / "base"}) == 0);
  REQUIRE(run({"build", "pspc-square", "--data", w / "aug/dataset.fpmc", "--patch-size", "3", "--steps", "6", "--out",
               w / "variant"}) == 0);
  REQUIRE(run({"sweep", "--model", w / "variant", "--baseline", w / "base", "--target-data", w / "oracle.fpmc",
               "--data", w / "oracle.fpmc", "--n-per-t", "32", "--seed", "3", "--out", w / "sw"}) == 0);
  const json rc = read_json(w.root / "sw/relative_change.json");
  CHECK(rc["percent"].size() == 6);
  const std::string csv = slurp(w.root / "sw/sweep.csv");
  CHECK(csv.rfind("t,mse,stderr\n", 0) == 0);

  CHECK(run({"augment", "--data", w / "data.fpmc", "--strategy", "synthetic", "--synthetic", w / "oracle.fpmc",
             "--count", "5", "--synthetic-seeds", "1", "2", "--reserved-seeds", "2", "3", "--out", w / "x"}) == 2);
  REQUIRE(run({"augment", "--data", w / "data.fpmc", "--strategy", "synthetic", "--synthetic", w / "oracle.fpmc",
               "--count", "5", "--out", w / "syn"}) == 0);
  CHECK(load_dataset(w.root / "syn/dataset.fpmc").size() == 17);
}
