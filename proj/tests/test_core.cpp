#include <filesystem>

#include "doctest.h"
#include "fpmc/classical.hpp"
#include "fpmc/constructors.hpp"
#include "fpmc/estimator.hpp"
#include "fpmc/parallel.hpp"
#include "support.hpp"

using namespace fpmc;
using namespace fpmc::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fpmc_unit";
  fs::create_directories(dir);
  return dir / name;
}

DatasetPtr line_data(std::initializer_list<double> values) {
  Batch b(static_cast<Index>(values.size()), 1);
  Index i = 0;
  for (double v : values) b(i++, 0) = v;
  return std::make_shared<const Dataset>(ImageGeometry(1, 1, 1), b);
}

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("geometry flattening and parsing") {
  const ImageGeometry g(4, 3, 2);
  CHECK(g.dims() == 24);
  CHECK(g.flat(1, 2, 1) == (2 * 4 + 1) * 2 + 1);
  const auto c = g.unflatten(g.flat(3, 1, 0));
  CHECK(c.x == 3);
  CHECK(c.y == 1);
  CHECK(c.c == 0);
  CHECK(ImageGeometry::parse("32x32x3") == ImageGeometry(32, 32, 3));
  CHECK(ImageGeometry::parse("8x6") == ImageGeometry(8, 6, 1));
  CHECK_THROWS_AS(ImageGeometry::parse("8xx"), ValidationError);
  CHECK_THROWS_AS(ImageGeometry(0, 1, 1), ValidationError);
}

TEST_CASE("dataset validation") {
  const ImageGeometry g(2, 1, 1);
  CHECK_THROWS_WITH_AS(Dataset(g, Batch(0, 2)), "empty dataset", ValidationError);
  CHECK_THROWS_AS(Dataset(g, Batch::Constant(1, 3, 0.0)), ValidationError);
  CHECK_THROWS_AS(Dataset(g, Batch::Constant(1, 2, 1.5)), ValidationError);
  const Dataset d(g, Batch::Constant(3, 2, 0.25));
  CHECK(d.slice(1, 2).size() == 2);
  CHECK(d.origin(2) == 2);
  const Dataset both = d.concat(Dataset(g, Batch::Constant(1, 2, 0.0)));
  CHECK(both.size() == 4);
  CHECK(both.origin(3) == -1);
}

TEST_CASE("png bytes map to [-1, 1]") {
  const fs::path dir = scratch("png_one");
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_png(dir / "a.png", {2, 2, 1, {0, 255, 128, 0}});
  const Dataset d = load_dataset(dir);
  REQUIRE(d.size() == 1);
  CHECK(d.images()(0, 0) == doctest::Approx(-1.0));
  CHECK(d.images()(0, 1) == doctest::Approx(1.0));
  CHECK(d.images()(0, 2) == doctest::Approx(128 / 127.5 - 1.0));
  CHECK(d.images()(0, 3) == doctest::Approx(-1.0));
  CHECK(to_byte(from_byte(77)) == 77);
  CHECK(to_byte(3.0) == 255);
}

TEST_CASE("tensor files round trip") {
  std::mt19937_64 rng(1);
  const ImageGeometry g(3, 2, 2);
  const Batch data = random_batch(5, g.dims(), rng);
  const fs::path p32 = scratch("t32.fpmc"), p64 = scratch("t64.fpmc");
  write_tensor(p32, g, data, {{"note", "x"}});
  write_tensor(p64, g, data, {}, TensorDtype::f64);
  const TensorFile a = read_tensor(p32), b = read_tensor(p64);
  CHECK(a.geometry == g);
  CHECK(a.extra["note"] == "x");
  CHECK(max_abs(a.data - data) < 1e-7);
  CHECK(b.data == data);
  const ImageGeometry wrong(2, 3, 2);
  save_dataset(scratch("ds.fpmc"), Dataset(g, data));
  CHECK_THROWS_AS(load_dataset(scratch("ds.fpmc"), &wrong), ValidationError);
  write_tensor(scratch("empty.fpmc"), g, Batch(0, g.dims()));
  CHECK_THROWS_AS(load_dataset(scratch("empty.fpmc")), ValidationError);
}

TEST_CASE("edm time grid") {
  const auto g = edm_time_grid(18, 0.002, 80.0, 7.0);
  REQUIRE(g.size() == 18);
  CHECK(g[0] == doctest::Approx(80.0));
  CHECK(g[8] == doctest::Approx(3.26).epsilon(2e-3));
  CHECK(g[17] == doctest::Approx(0.002));
  CHECK(edm_time_grid(40, 0.002, 80.0, 7.0)[13] == doctest::Approx(9.72).epsilon(1e-3));
  const auto two = edm_time_grid(2, 0.5, 4.0, 3.0);
  CHECK(two[0] == doctest::Approx(4.0));
  CHECK(two[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(edm_time_grid(1, 0.1, 1.0, 7.0), ValidationError);
  CHECK_THROWS_AS(DiffusionSchedule::edm({1.0, 2.0}), ValidationError);
  const auto s = DiffusionSchedule::edm(g);
  CHECK(s.find_step(g[5]) == 5);
  CHECK(s.find_step(1.2345) == -1);
}

TEST_CASE("source measure masking renormalizes") {
  const auto data = line_data({0.0, 0.1, 0.2, 0.3});
  const auto nu = SourceMeasure::uniform(data).without({0});
  CHECK(nu.weights()[0] == 0.0);
  for (Index i = 1; i < 4; ++i) CHECK(nu.weights()[i] == doctest::Approx(1.0 / 3));
  CHECK(nu.support().size() == 3);
  CHECK_THROWS_AS(SourceMeasure::uniform(data).without({0, 1, 2, 3}), ValidationError);
}

TEST_CASE("filtered likelihood and posterior oracles") {
  const auto sched = DiffusionSchedule::edm({0.5});
  CHECK(filtered_log_likelihood(vec({0.0}), vec({1.0}), vec({2.0}), 0.5, sched) == doctest::Approx(-4.0));
  const Vec x = vec({0.3, -0.2});
  CHECK(filtered_log_likelihood(x, x, vec({1.0, 5.0}), 0.5, sched) == 0.0);
  CHECK(filtered_log_likelihood(vec({0.3, 0.9}), x, vec({1.0, 0.0}), 0.5, sched) == 0.0);

  const auto nu = SourceMeasure::uniform(line_data({0.0, 1.0}));
  const Vec w = filtered_posterior(vec({0.75}), vec({1.0}), nu, 0.5, sched);
  CHECK(w[0] == doctest::Approx(0.2689414214));
  CHECK(w[1] == doctest::Approx(0.7310585786));
  CHECK(filtered_posterior_mean(vec({0.75}), 0.5, vec({1.0}), nu, sched)[0] == doctest::Approx(0.7310585786));
  const auto single = SourceMeasure::uniform(line_data({0.4}));
  CHECK(filtered_posterior(vec({-3.0}), vec({1.0}), single, 0.5, sched)[0] == 1.0);
  CHECK(filtered_posterior_mean(vec({9.0}), 0.5, vec({1.0}), single, sched)[0] == doctest::Approx(0.4));
}

TEST_CASE("posterior prior limit") {
  std::mt19937_64 rng(3);
  const auto data = random_dataset(ImageGeometry(3, 1, 1), 6, rng);
  const auto sched = DiffusionSchedule::edm({1e9});
  const Vec w = filtered_posterior(vec({0.5, -0.5, 0.1}), Vec::Ones(3), SourceMeasure::uniform(data), 1e9, sched);
  for (Index i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(1.0 / 6));
}

TEST_CASE("score from denoiser") {
  const auto sched = DiffusionSchedule::edm({2.0});
  Batch z = Batch::Zero(1, 1), d = Batch::Constant(1, 1, 4.0);
  CHECK(score_from_denoiser(z, d, 2.0, sched)(0, 0) == doctest::Approx(1.0));
  Batch z2 = Batch::Constant(2, 3, 0.7);
  CHECK(max_abs(score_from_denoiser(z2, z2, 2.0, sched)) == 0.0);
}

TEST_CASE("aggregation oracle") {
  const ImageGeometry g(2, 1, 1);
  Batch img(2, 2);
  img << 1, 5, 3, 7;
  // Two single-image sources make each estimator constant.
  const auto a = std::make_shared<const Dataset>(g, Batch(img.row(0) / 10.0));
  const auto b = std::make_shared<const Dataset>(g, Batch(img.row(1) / 10.0));
  FpmcStep st;
  st.t = 1.0;
  st.Q = Batch::Ones(2, 2);
  st.R.resize(2, 2);
  st.R << 1, 0, 1, 1;
  st.sources = {SourceMeasure::uniform(a), SourceMeasure::uniform(b)};
  st.source_of = {0, 1};
  const FpmcModel m(g, DiffusionSchedule::edm({1.0}), {st});
  const Batch out = fpmc_denoise(Batch::Zero(1, 2), 0, m) * 10.0;
  CHECK(out(0, 0) == doctest::Approx(2.0));
  CHECK(out(0, 1) == doctest::Approx(7.0));
}

TEST_CASE("model construction rejects coverage gaps") {
  const ImageGeometry g(2, 1, 1);
  const auto data = line_data({0.0});
  const auto d2 = std::make_shared<const Dataset>(g, Batch::Zero(1, 2));
  FpmcStep st;
  st.t = 1.0;
  st.Q = Batch::Ones(1, 2);
  st.R = Batch(1, 2);
  st.R << 1, 0;
  st.sources = {SourceMeasure::uniform(d2)};
  st.source_of = {0};
  CHECK_THROWS_WITH_AS(FpmcModel(g, DiffusionSchedule::edm({1.0}), {st}),
                       doctest::Contains("coverage violation at dimension 1"), ValidationError);
  st.R << 1, 1;
  st.Q(0, 0) = -1;
  CHECK_THROWS_AS(FpmcModel(g, DiffusionSchedule::edm({1.0}), {st}), ValidationError);
}

TEST_CASE("properties on random instances") {
  std::mt19937_64 rng(11);
  const ImageGeometry g(3, 3, 1);
  const auto data = random_dataset(g, 9, rng);
  const auto sched = DiffusionSchedule::edm({2.0, 0.4});
  const auto sizes = ScheduleTable::constant(ScheduleTable::Kind::PatchSize, sched.t_grid(), 3);
  const FpmcModel model = build_ls(sizes, data, sched);

  SUBCASE("posterior weights sum to one") {
    for (int k = 0; k < 5; ++k) {
      const Vec z = random_batch(1, 9, rng).row(0).transpose();
      const Vec q = random_batch(1, 9, rng, 0.0, 2.0).row(0).transpose();
      CHECK(filtered_posterior(z, q, SourceMeasure::uniform(data), 0.4, sched).sum() == doctest::Approx(1.0));
    }
  }
  SUBCASE("output stays inside the per-dimension hull of the support") {
    const Batch z = 3.0 * gaussian_batch(20, 9, rng);
    const Batch out = fpmc_denoise(z, 1, model);
    const Eigen::RowVectorXd lo = data->images().colwise().minCoeff(), hi = data->images().colwise().maxCoeff();
    for (Index b = 0; b < out.rows(); ++b) {
      CHECK((out.row(b).array() >= lo.array() - 1e-12).all());
      CHECK((out.row(b).array() <= hi.array() + 1e-12).all());
    }
  }
  SUBCASE("thread count does not change results") {
    const Batch z = gaussian_batch(16, 9, rng);
    set_num_threads(1);
    const Batch one = fpmc_denoise(z, 0, model);
    set_num_threads(4);
    const Batch four = fpmc_denoise(z, 0, model);
    set_num_threads(0);
    CHECK(rel_err(one, four) < 1e-12);
  }
  SUBCASE("batched and single evaluation agree") {
    const Batch z = gaussian_batch(4, 9, rng);
    const Batch all = filtered_posterior_mean(z, 0.4, Vec::Ones(9), SourceMeasure::uniform(data), sched);
    for (Index b = 0; b < 4; ++b) {
      const Vec one = filtered_posterior_mean(Vec(z.row(b).transpose()), 0.4, Vec::Ones(9), SourceMeasure::uniform(data), sched);
      CHECK((one - all.row(b).transpose()).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("softmax flushes underflow") {
  std::vector<double> a = {0.0, -800.0, -1.0};
  detail::softmax_inplace(a);
  CHECK(a[1] == 0.0);
  CHECK(a[0] + a[2] == doctest::Approx(1.0));
}
