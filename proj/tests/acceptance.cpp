// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fpmc/augment.hpp"
#include "fpmc/classical.hpp"
#include "fpmc/constructors.hpp"
#include "fpmc/denoiser.hpp"
#include "fpmc/digest.hpp"
#include "fpmc/eval.hpp"
#include "fpmc/finetune.hpp"
#include "fpmc/sampler.hpp"
#include "support.hpp"

using namespace fpmc;
using namespace fpmc::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// 1. L = 1, q = r = 1, uniform source against the closed-form posterior mean.
Outcome check_reduction() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<Index> dim(1, 64), cnt(1, 32);
  const std::vector<double> ts = {0.01, 0.1, 1.0, 10.0, 80.0};
  const auto sched = DiffusionSchedule::edm({80.0, 10.0, 1.0, 0.1, 0.01});
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ImageGeometry g(dim(rng), 1, 1);
    const auto data = random_dataset(g, cnt(rng), rng);
    const FpmcModel model = build_full_image(data, sched);
    const Batch z = gaussian_batch(8, g.dims(), rng, 2.0);
    for (double t : ts) {
      const Batch zt = z * t;
      worst = std::max(worst, rel_err(fpmc_denoise(zt, model.step_for(t), model), optimal_denoiser(zt, t, *data, sched)));
    }
  }
  return {worst <= 1e-10, "max relative error " + fmt("%.2e", worst)};
}

// 2. Explicit crop-matrix PSPC: (sum_C C^T C)^{-1} sum_C C^T D*(C z; C data).
Batch explicit_pspc(const Batch& z, double t, const Dataset& data, Index s, const DiffusionSchedule& sched) {
  const ImageGeometry& g = data.geometry();
  Batch num = Batch::Zero(z.rows(), g.dims());
  Vec count = Vec::Zero(g.dims());
  for (Index y0 = 0; y0 + s <= g.height; ++y0) {
    for (Index x0 = 0; x0 + s <= g.width; ++x0) {
      std::vector<Index> idx;
      for (Index y = y0; y < y0 + s; ++y)
        for (Index x = x0; x < x0 + s; ++x) idx.push_back(g.flat(x, y));
      const Index k = static_cast<Index>(idx.size());
      Batch crops(data.size(), k), zc(z.rows(), k);
      for (Index j = 0; j < k; ++j) {
        crops.col(j) = data.images().col(idx[j]);
        zc.col(j) = z.col(idx[j]);
      }
      const Dataset cropped(ImageGeometry(k, 1, 1), crops);
      const Batch d = optimal_denoiser(zc, t, cropped, sched);
      for (Index j = 0; j < k; ++j) {
        num.col(idx[j]) += d.col(j);
        count[idx[j]] += 1.0;
      }
    }
  }
  for (Index j = 0; j < g.dims(); ++j) num.col(j) /= count[j];
  return num;
}

Outcome check_pspc_crop() {
  std::mt19937_64 rng(202);
  const ImageGeometry g(4, 4, 1);
  const auto data = random_dataset(g, 10, rng);
  const auto sched = DiffusionSchedule::edm({2.0, 0.5, 0.05});
  double worst = 0.0;
  for (Index s : {1, 3}) {
    const auto model = build_pspc_square(ScheduleTable::constant(ScheduleTable::Kind::PatchSize, sched.t_grid(), s), data, sched);
    for (std::size_t i = 0; i < sched.num_steps(); ++i) {
      const double t = sched.t_grid()[i];
      const Batch z = random_batch(6, g.dims(), rng) + t * gaussian_batch(6, g.dims(), rng);
      worst = std::max(worst, max_abs(fpmc_denoise(z, i, model) - explicit_pspc(z, t, *data, s, sched)));
    }
  }
  return {worst <= 1e-10, "max abs difference " + fmt("%.2e", worst)};
}

// 3. ELS against a posterior mean over explicitly extracted patches.
double brute_els_pixel(const Eigen::Ref<const Vec>& z, double t, const Dataset& data, Index px, Index py, Index s) {
  const ImageGeometry& g = data.geometry();
  const Index k = s / 2;
  auto centres = [&](Index p, Index size) {
    std::vector<Index> out;
    if (p >= k && p <= size - k - 1) {
      for (Index c = k; c <= size - k - 1; ++c) out.push_back(c);
    } else {
      out.push_back(p);
    }
    return out;
  };
  std::vector<double> logw, value;
  for (Index n = 0; n < data.size(); ++n) {
    for (Index cy : centres(py, g.height)) {
      for (Index cx : centres(px, g.width)) {
        double sq = 0.0;
        for (Index v = -k; v <= k; ++v) {
          for (Index u = -k; u <= k; ++u) {
            const Index qx = px + u, qy = py + v;
            if (qx < 0 || qy < 0 || qx >= g.width || qy >= g.height) continue;
            const double diff = z[g.flat(qx, qy)] - data.images()(n, g.flat(cx + u, cy + v));
            sq += diff * diff;
          }
        }
        logw.push_back(-sq / (2.0 * t * t));
        value.push_back(data.images()(n, g.flat(cx, cy)));
      }
    }
  }
  const double m = *std::max_element(logw.begin(), logw.end());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    const double w = std::exp(logw[i] - m);
    num += w * value[i];
    den += w;
  }
  return num / den;
}

Outcome check_els() {
  std::mt19937_64 rng(303);
  const ImageGeometry g(6, 6, 1);
  const auto data = random_dataset(g, 8, rng);
  const auto sched = DiffusionSchedule::edm({3.0, 0.7, 0.15});
  double worst = 0.0;
  std::map<std::string, int> classes;
  for (Index s : {3, 5}) {
    const auto model = build_els(ScheduleTable::constant(ScheduleTable::Kind::PatchSize, sched.t_grid(), s), data, sched);
    const Index k = s / 2;
    for (std::size_t i = 0; i < sched.num_steps(); ++i) {
      const double t = sched.t_grid()[i];
      const Batch z = random_batch(3, g.dims(), rng) + t * gaussian_batch(3, g.dims(), rng);
      const Batch out = fpmc_denoise(z, i, model);
      for (Index b = 0; b < z.rows(); ++b) {
        for (Index y = 0; y < g.height; ++y) {
          for (Index x = 0; x < g.width; ++x) {
            const bool ix = x >= k && x <= g.width - k - 1, iy = y >= k && y <= g.height - k - 1;
            ++classes[ix && iy ? "center" : (ix || iy ? "edge" : "corner")];
            const Vec zb = z.row(b).transpose();
            worst = std::max(worst, std::abs(out(b, g.flat(x, y)) - brute_els_pixel(zb, t, *data, x, y, s)));
          }
        }
      }
    }
  }
  const bool all_classes = classes.size() == 3;
  return {worst <= 1e-10 && all_classes,
          "max abs difference " + fmt("%.2e", worst) + " over center/edge/corner pixels"};
}

// 4. Eigen-form Wiener matrix against the linear-solve form.
Outcome check_wiener() {
  std::mt19937_64 rng(404);
  const auto sched = DiffusionSchedule::edm({1.0});
  double worst_matrix = 0.0;
  for (Index d : {2, 5, 13, 32}) {
    const Batch a = gaussian_batch(d, d, rng);
    const Batch sigma = a * a.transpose() + 0.1 * Batch::Identity(d, d);
    Eigen::SelfAdjointEigenSolver<Batch> es(sigma);
    WienerModel wm{Vec::Zero(d), es.eigenvectors(), es.eigenvalues()};
    for (double t : {0.05, 0.7, 5.0, 60.0}) {
      const Batch w = wiener_matrix(wm, t, sched);
      // alpha Sigma (alpha^2 Sigma + sigma^2 I)^{-1}, via the symmetric solve.
      const Batch m = sigma + t * t * Batch::Identity(d, d);
      const Batch direct = m.ldlt().solve(sigma).transpose();
      worst_matrix = std::max(worst_matrix, max_abs(w - direct));
    }
  }
  const ImageGeometry g(16, 1, 1);
  const Batch l = gaussian_batch(16, 16, rng, 0.02);
  Batch x = gaussian_batch(2000, 16, rng) * l.transpose();
  x.rowwise() += gaussian_batch(1, 16, rng, 0.1).row(0);
  const Dataset data(g, x);
  const WienerModel wm = fit_wiener(data);
  const Vec mean = x.colwise().mean().transpose();
  const Batch xc = x.rowwise() - mean.transpose();
  const Batch sigma = xc.transpose() * xc / static_cast<double>(x.rows());
  double worst_post = 0.0;
  for (double t : {0.1, 1.0, 10.0}) {
    const Batch z = x.topRows(50) + t * gaussian_batch(50, 16, rng);
    const Batch got = wiener_denoise(z, t, wm, sched);
    const Batch m = sigma + t * t * Batch::Identity(16, 16);
    const Batch zc = z.rowwise() - mean.transpose();
    Batch expect = (sigma * m.ldlt().solve(zc.transpose())).transpose();
    expect.rowwise() += mean.transpose();
    worst_post = std::max(worst_post, max_abs(got - expect));
  }
  return {worst_matrix <= 1e-8 && worst_post <= 1e-8,
          "matrix " + fmt("%.2e", worst_matrix) + ", posterior mean " + fmt("%.2e", worst_post)};
}

// 5. Analytic gradients against central differences.
Outcome check_gradients() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int> small(2, 5);
  double worst = 0.0;
  int instances = 0;
  const FinetuneMode modes[] = {FinetuneMode::Q, FinetuneMode::R, FinetuneMode::Joint};
  for (int trial = 0; trial < 24; ++trial) {
    const FinetuneMode mode = modes[trial % 3];
    const bool leave_out = (trial / 3) % 2 == 0;
    const Index d = small(rng), n = small(rng) + 2, L = small(rng);
    const double t = std::exp(std::uniform_real_distribution<double>(std::log(0.2), std::log(3.0))(rng));
    const auto sched = DiffusionSchedule::edm({t});
    const ImageGeometry g(d, 1, 1);
    const auto data = random_dataset(g, n, rng);
    FpmcStep step;
    step.t = t;
    step.Q = random_batch(L, d, rng, 0.2, 1.5);
    step.R = random_batch(L, d, rng, 0.2, 1.5);
    step.sources = {SourceMeasure::uniform(data)};
    step.source_of.assign(static_cast<std::size_t>(L), 0);
    TrainBatch batch;
    batch.indices = {0, 1};
    batch.z = data->images().topRows(2) + t * gaussian_batch(2, d, rng);
    const auto target_data = random_dataset(g, 5, rng);
    const OptimalDenoiser target(target_data, sched);
    LogParams p = init_log_params(step, mode);
    p.theta += random_batch(L, d, rng, -0.3, 0.3);
    p.phi += random_batch(L, d, rng, -0.3, 0.3);
    const Objective obj = finetune_grad(p, step, batch, target, sched, 1.0, leave_out);
    auto check = [&](Batch& param, const Batch& grad) {
      const double h = 1e-5;
      Batch fd(param.rows(), param.cols());
      for (Index i = 0; i < param.size(); ++i) {
        const double keep = param.data()[i];
        param.data()[i] = keep + h;
        const double up = finetune_loss(p, step, batch, target, sched, 1.0, leave_out);
        param.data()[i] = keep - h;
        const double down = finetune_loss(p, step, batch, target, sched, 1.0, leave_out);
        param.data()[i] = keep;
        fd.data()[i] = (up - down) / (2 * h);
      }
      // Floor at the finite-difference roundoff level for near-zero gradients.
      const double scale = std::max({fd.norm(), grad.norm(), 1e-8});
      worst = std::max(worst, (grad - fd).norm() / scale);
    };
    if (p.trains_q()) check(p.theta, obj.grad_theta);
    if (p.trains_r()) check(p.phi, obj.grad_phi);
    ++instances;
  }
  return {worst < 1e-4, std::to_string(instances) + " instances, max relative error " + fmt("%.2e", worst)};
}

// Mixture of isotropic Gaussians with an exact closed-form denoiser.
struct GaussianMixture {
  Batch means;
  double s2;

  Batch denoise(const Batch& z, double t) const {
    const double v = s2 + t * t, shrink = s2 / v;
    Batch out(z.rows(), z.cols());
    for (Index b = 0; b < z.rows(); ++b) {
      Vec logw(means.rows());
      for (Index k = 0; k < means.rows(); ++k) logw[k] = -(z.row(b) - means.row(k)).squaredNorm() / (2 * v);
      const Vec w = (logw.array() - logw.maxCoeff()).exp();
      const double total = w.sum();
      out.row(b).setZero();
      for (Index k = 0; k < means.rows(); ++k) {
        out.row(b) += (w[k] / total) * (means.row(k) + shrink * (z.row(b) - means.row(k)));
      }
    }
    return out;
  }
};

// 6. Heun endpoint error shrinks about fourfold when the step count doubles.
Outcome check_heun_order() {
  std::mt19937_64 rng(606);
  const Index d = 4;
  const GaussianMixture gm{random_batch(4, d, rng, -1.0, 1.0), 0.25 * 0.25};
  const CallbackDenoiser den([&](const Batch& z, double t) { return gm.denoise(z, t); }, "mixture");
  auto run = [&](std::size_t m, const Batch& z0) {
    return heun_sample_from(z0, DiffusionSchedule::edm(edm_time_grid(m, 0.002, 80.0, 7.0)), den).x;
  };
  const Batch z0 = 80.0 * gaussian_batch(64, d, rng);
  const Batch ref = run(360, z0);
  const double e18 = (run(18, z0) - ref).norm();
  const double e36 = (run(36, z0) - ref).norm();
  const double ratio = e18 / e36;
  return {ratio >= 3.0 && ratio <= 5.0,
          "error 18 steps " + fmt("%.3e", e18) + ", 36 steps " + fmt("%.3e", e36) + ", ratio " + fmt("%.2f", ratio)};
}

// 7. Soft-Q fine-tuning of a binary 3x3 patch model against a larger-data oracle.
Outcome check_finetune_efficacy() {
  std::mt19937_64 rng(707);
  const ImageGeometry g(8, 8, 1);
  const auto train = std::make_shared<const Dataset>(g, manifold_images(g, 64, rng));
  const auto oracle_data = std::make_shared<const Dataset>(g, manifold_images(g, 1024, rng));
  const auto held_out = std::make_shared<const Dataset>(g, manifold_images(g, 256, rng));
  const auto sched = DiffusionSchedule::edm(edm_time_grid(18, 0.002, 80.0, 7.0));
  const auto sizes = ScheduleTable::constant(ScheduleTable::Kind::PatchSize, sched.t_grid(), 3);
  const auto base = std::make_shared<const FpmcModel>(build_pspc_square(sizes, train, sched));
  const OptimalDenoiser oracle(oracle_data, sched);

  FinetuneConfig cfg;
  cfg.mode = FinetuneMode::Q;
  cfg.batch_size = 16;
  cfg.max_steps = 400;
  cfg.adam.learning_rate = 0.05;
  cfg.validation = held_out;
  cfg.validation_size = 128;
  cfg.seed = 7;

  std::string detail;
  bool pass = true;
  for (std::size_t step : {10u, 11u, 12u}) {
    const FinetuneResult res = finetune_run(*base, step, oracle, train, cfg);
    const auto tuned = std::make_shared<const FpmcModel>(base->with_step(step, res.step));
    const double t = sched.t_grid()[step];
    const FpmcDenoiser before(base), after(tuned);
    const Dataset sweep_x = held_out->slice(128, 128);
    const double e0 = denoiser_error_sweep(before, oracle, sweep_x, sched, {t}, 512, 99).points[0].mse.mean;
    const double e1 = denoiser_error_sweep(after, oracle, sweep_x, sched, {t}, 512, 99).points[0].mse.mean;
    const double gain = 1.0 - e1 / e0;
    pass = pass && gain >= 0.10;
    detail += (detail.empty() ? "" : "; ") + std::string("t=") + fmt("%.3g", t) + " " + fmt("%.1f%%", 100 * gain);
  }
  return {pass, "MSE reduction " + detail};
}

// 8. Augmentation counts, involution, dedup and quotas.
Outcome check_augment() {
  std::mt19937_64 rng(808);
  const ImageGeometry g(6, 5, 2);
  const Index n = 10;
  const Dataset data(g, random_batch(n, g.dims(), rng));
  AugmentPlan plan;
  plan.strategy = AugmentStrategy::HFlip;
  plan.fraction = 1.0;
  const AugmentResult flipped = build_augmented(data, plan);
  bool ok = flipped.data.size() == 2 * n && static_cast<Index>(flipped.labels.size()) == n;
  std::vector<int> per_source(n, 0);
  for (const auto& lab : flipped.labels) {
    ++per_source[static_cast<std::size_t>(lab.source)];
    const Vec img = flipped.data.row(lab.output_index).transpose();
    ok = ok && img.isApprox(hflip(data.row(lab.source).transpose(), g), 0) &&
         hflip(img, g).isApprox(data.row(lab.source).transpose(), 0);
  }
  for (int c : per_source) ok = ok && c == 1;

  auto labels = sample_labels(n, g, {AugmentStrategy::Translate, 1.0, 20, 3});
  const std::size_t unique = dedup_labels(labels).size();
  labels.push_back(labels[3]);
  labels.push_back(labels[7]);
  ok = ok && dedup_labels(labels).size() == unique;

  const auto pool = dedup_labels(labels);
  for (double frac : {0.2, 1.0, 2.0}) {
    const Index target = static_cast<Index>(std::floor(frac * n));
    const auto chosen = subsample_labels(pool, n, target, 11);
    std::vector<Index> counts(n, 0);
    for (const auto& lab : chosen) ++counts[static_cast<std::size_t>(lab.source)];
    const Index lo = target / n, hi = lo + (target % n ? 1 : 0);
    ok = ok && static_cast<Index>(chosen.size()) == target;
    Index extra = 0;
    for (Index c : counts) {
      ok = ok && c >= lo && c <= hi;
      extra += c - lo;
    }
    ok = ok && extra == target % n;
  }
  return {ok, "hflip doubles N=10, dedup and 20%/100%/200% quotas"};
}

// 9. Tabulated sampling times at printed precision, and the Heun call count.
bool matches_printed(double value, const std::string& printed) {
  const double p = std::stod(printed);
  const auto dot = printed.find('.');
  const int decimals = dot == std::string::npos ? 0 : static_cast<int>(printed.size() - dot - 1);
  double half_ulp = 0.5 * std::pow(10.0, -decimals);
  // "80" and "1." style entries are exact or integral.
  if (decimals == 0) half_ulp = 0.5;
  return std::abs(value - p) <= half_ulp + 1e-12;
}

Outcome check_schedule() {
  const std::vector<std::string> t18 = {"80.0", "57.6", "40.8", "28.4", "19.4", "12.9", "8.40", "5.32", "3.26",
                                        "1.92", "1.09", "0.585", "0.296", "0.140", "0.060", "0.023", "0.008", "0.002"};
  const std::vector<std::string> t40 = {"80",    "69.5",  "60.1",  "51.9",  "44.6",  "38.3",  "32.7",  "27.8",
                                        "23.6",  "19.9",  "16.8",  "14.1",  "11.7",  "9.72",  "8.03",  "6.59",
                                        "5.38",  "4.37",  "3.52",  "2.82",  "2.24",  "1.77",  "1.38",  "1.07",
                                        "0.823", "0.625", "0.470", "0.349", "0.256", "0.185", "0.131", "0.092",
                                        "0.063", "0.042", "0.028", "0.018", "0.011", "0.006", "0.004", "0.002"};
  int mismatches = 0;
  const auto g18 = edm_time_grid(18, 0.002, 80.0, 7.0);
  const auto g40 = edm_time_grid(40, 0.002, 80.0, 7.0);
  for (std::size_t i = 0; i < t18.size(); ++i) mismatches += !matches_printed(g18[i], t18[i]);
  for (std::size_t i = 0; i < t40.size(); ++i) mismatches += !matches_printed(g40[i], t40[i]);

  std::mt19937_64 rng(909);
  const ImageGeometry g(4, 4, 1);
  auto counted = std::make_shared<CountingDenoiser>(
      std::make_shared<OptimalDenoiser>(random_dataset(g, 5, rng), DiffusionSchedule::edm(g18)));
  SamplerConfig cfg{DiffusionSchedule::edm(g18), 1, 1, false};
  const SampleResult r = heun_sample(cfg, *counted, g);
  const bool ok = mismatches == 0 && counted->calls() == 35 && r.denoiser_calls == 35;
  return {ok, std::to_string(t18.size() + t40.size()) + " times checked, " + std::to_string(mismatches) +
                  " mismatches; " + std::to_string(counted->calls()) + " denoiser calls on the 18-step grid"};
}

// 10. Posterior concentration at small t and flattening at large t.
Outcome check_posterior_limits() {
  std::mt19937_64 rng(1010);
  const auto sched = DiffusionSchedule::edm({1e6, 1e-3});
  double worst_peak = 1.0, worst_gap = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const ImageGeometry g(6, 1, 1);
    const auto data = random_dataset(g, 7, rng);
    const auto nu = SourceMeasure::uniform(data);
    const Vec q = random_batch(1, 6, rng, 0.1, 2.0).row(0).transpose();
    const Vec z = random_batch(1, 6, rng).row(0).transpose();
    Index nearest = 0;
    double best = 1e300;
    for (Index i = 0; i < data->size(); ++i) {
      const double dist = ((data->row(i).transpose() - z).array().square() * q.array()).sum();
      if (dist < best) best = dist, nearest = i;
    }
    const Vec sharp = filtered_posterior(z, q, nu, 1e-3, sched);
    worst_peak = std::min(worst_peak, sharp[nearest]);
    const Vec flat = filtered_posterior(z, q, nu, 1e6, sched);
    worst_gap = std::max(worst_gap, flat.maxCoeff() - flat.minCoeff());
  }
  return {worst_peak > 1 - 1e-6 && worst_gap < 1e-6,
          "min nearest weight " + fmt("%.12f", worst_peak) + ", max gap at t=1e6 " + fmt("%.2e", worst_gap)};
}

// 11. Two models sampled from the same seed share initial noise.
Outcome check_end_to_end() {
  std::mt19937_64 rng(1111);
  const ImageGeometry g(8, 8, 1);
  const auto data = std::make_shared<const Dataset>(g, manifold_images(g, 200, rng));
  const auto sched = DiffusionSchedule::edm(edm_time_grid(18, 0.002, 80.0, 7.0));
  const auto sizes = ScheduleTable::builtin("cifar10", "pspc-square");
  const auto pspc = std::make_shared<const FpmcModel>(build_pspc_square(sizes, data, sched, true));
  const FpmcDenoiser a(pspc, "pspc-square");
  const WienerDenoiser b(fit_wiener(*data), sched);
  SamplerConfig cfg{sched, 2024, 16, false};
  const SampleResult ra = heun_sample(cfg, a, g);
  const SampleResult rb = heun_sample(cfg, b, g);
  const bool same_noise = sha256_batch(ra.z0) == sha256_batch(rb.z0);
  const bool in_range = ra.x.allFinite() && ra.x.maxCoeff() <= 1.0 && ra.x.minCoeff() >= -1.0;
  return {same_noise && in_range, std::string("shared z digest ") + (same_noise ? "yes" : "no") +
                                      ", pspc samples in [" + fmt("%.3f", ra.x.minCoeff()) + ", " +
                                      fmt("%.3f", ra.x.maxCoeff()) + "]"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"fpmc-optimal reduction", check_reduction},
      {"pspc crop-matrix equivalence", check_pspc_crop},
      {"els patch multiset", check_els},
      {"wiener correctness", check_wiener},
      {"gradient correctness", check_gradients},
      {"heun order", check_heun_order},
      {"fine-tuning efficacy", check_finetune_efficacy},
      {"augmentation pipeline", check_augment},
      {"schedule golden values", check_schedule},
      {"posterior limits", check_posterior_limits},
      {"end-to-end smoke", check_end_to_end},
  };
  int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i + 1) != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2zu %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
