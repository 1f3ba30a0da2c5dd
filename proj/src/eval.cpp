#include "fpmc/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace fpmc {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

nlohmann::json summary_json(const MetricSummary& s) {
  nlohmann::json j = {{"mean", s.mean}, {"n", s.n}};
  j["stderr"] = std::isfinite(s.stderr_) ? nlohmann::json(s.stderr_) : nlohmann::json(nullptr);
  return j;
}

// Mixes the sweep seed with the t index so each t has its own stream.
std::uint64_t stream_seed(std::uint64_t seed, std::size_t t_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t_index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.n = static_cast<Index>(values.size());
  if (values.empty()) {
    s.mean = std::numeric_limits<double>::quiet_NaN();
    s.stderr_ = s.mean;
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n < 2) {
    s.stderr_ = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stderr_ = std::sqrt(ss / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  return s;
}

ComparisonReport sample_similarity(const Batch& a, const Batch& b, const std::string& label) {
  if (a.rows() != b.rows()) throw ValidationError("sample counts differ: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
  if (a.cols() != b.cols()) throw ValidationError("sample dimensions differ");
  if (a.rows() == 0 || a.cols() == 0) throw ValidationError("no samples to compare");
  ComparisonReport rep;
  rep.label = label;
  const double d = static_cast<double>(a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const double sq = (a.row(i) - b.row(i)).squaredNorm();
    rep.mse_per_sample.push_back(sq / d);
    const double mean = b.row(i).mean();
    const double var = (b.row(i).array() - mean).square().sum();
    if (var > 0.0) {
      rep.r2_per_sample.push_back(1.0 - sq / var);
    } else {
      rep.excluded.push_back(i);
    }
  }
  rep.mse = summarize(rep.mse_per_sample);
  rep.r2 = summarize(rep.r2_per_sample);
  return rep;
}

nlohmann::json ComparisonReport::to_json() const {
  return {{"label", label},          {"mse", summary_json(mse)},   {"r2", summary_json(r2)},
          {"excluded", excluded},    {"r2_convention", r2_convention}};
}

std::string ComparisonReport::to_text() const {
  std::ostringstream os;
  os << (label.empty() ? "comparison" : label) << "\n";
  os << "  metric      mean          stderr        n\n";
  os << "  mse     " << fmt("%13.6e", mse.mean) << " " << fmt("%13.6e", mse.stderr_) << " " << mse.n << "\n";
  os << "  r2      " << fmt("%13.6e", r2.mean) << " " << fmt("%13.6e", r2.stderr_) << " " << r2.n << "\n";
  if (!excluded.empty()) os << "  excluded (zero-variance reference): " << excluded.size() << "\n";
  return os.str();
}

Batch sweep_inputs(const Dataset& data, const DiffusionSchedule& sched, double t, std::size_t t_index, Index n,
                   std::uint64_t seed) {
  if (!(t > 0.0)) throw ValidationError("sweep times must be positive");
  if (n < 1) throw ValidationError("sweep needs at least one draw per t");
  if (data.size() < 1) throw ValidationError("sweep dataset is empty");
  std::mt19937_64 rng(stream_seed(seed, t_index));
  std::uniform_int_distribution<Index> pick(0, data.size() - 1);
  std::normal_distribution<double> normal;
  const double a = sched.alpha(t), s = sched.sigma(t);
  Batch z(n, data.dims());
  for (Index i = 0; i < n; ++i) {
    const Index row = pick(rng);
    for (Index k = 0; k < z.cols(); ++k) z(i, k) = a * data.images()(row, k) + s * normal(rng);
  }
  return z;
}

SweepResult denoiser_error_sweep(const Denoiser& denoiser, const Denoiser& target, const Dataset& data,
                                 const DiffusionSchedule& sched, const std::vector<double>& t_list, Index n_per_t,
                                 std::uint64_t seed, Index chunk) {
  if (chunk < 1) throw ValidationError("chunk size must be >= 1");
  for (double t : t_list) {
    if (!(t > 0.0)) throw ValidationError("sweep times must be positive, got " + std::to_string(t));
  }
  SweepResult out;
  out.label = denoiser.name() + " vs " + target.name();
  for (std::size_t ti = 0; ti < t_list.size(); ++ti) {
    const double t = t_list[ti];
    const Batch z = sweep_inputs(data, sched, t, ti, n_per_t, seed);
    std::vector<double> errs;
    errs.reserve(n_per_t);
    for (Index start = 0; start < n_per_t; start += chunk) {
      const Index len = std::min(chunk, n_per_t - start);
      const Batch zc = z.middleRows(start, len);
      const Batch da = denoiser.denoise(zc, t);
      const Batch db = target.denoise(zc, t);
      for (Index i = 0; i < len; ++i) errs.push_back((da.row(i) - db.row(i)).squaredNorm() / da.cols());
    }
    out.points.push_back({t, summarize(errs)});
  }
  return out;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({{"t", p.t}, {"mse", summary_json(p.mse)}});
  return {{"label", label}, {"points", pts}};
}

std::string SweepResult::to_text() const {
  std::ostringstream os;
  os << (label.empty() ? "sweep" : label) << "\n";
  os << "  t             mse           stderr        n\n";
  for (const auto& p : points) {
    os << "  " << fmt("%-13.6g", p.t) << " " << fmt("%13.6e", p.mse.mean) << " " << fmt("%13.6e", p.mse.stderr_)
       << " " << p.mse.n << "\n";
  }
  return os.str();
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os << "t,mse,stderr\n";
  for (const auto& p : points) os << fmt("%.17g", p.t) << "," << fmt("%.17g", p.mse.mean) << "," << fmt("%.17g", p.mse.stderr_) << "\n";
  return os.str();
}

RelativeChange relative_error_change(const SweepResult& baseline, const SweepResult& variant) {
  if (baseline.points.size() != variant.points.size()) throw ValidationError("sweeps have different t grids");
  RelativeChange out;
  for (std::size_t i = 0; i < baseline.points.size(); ++i) {
    const auto& b = baseline.points[i];
    const auto& v = variant.points[i];
    if (std::abs(b.t - v.t) > 1e-12 * std::max(1.0, std::abs(b.t))) throw ValidationError("sweeps have different t grids");
    if (b.mse.mean == 0.0) throw ValidationError("baseline error is zero at t=" + std::to_string(b.t));
    out.t.push_back(b.t);
    out.percent.push_back(100.0 * (v.mse.mean - b.mse.mean) / b.mse.mean);
  }
  return out;
}

nlohmann::json RelativeChange::to_json() const { return {{"t", t}, {"percent", percent}}; }

std::string RelativeChange::to_text() const {
  std::ostringstream os;
  os << "  t             change(%)\n";
  for (std::size_t i = 0; i < t.size(); ++i) os << "  " << fmt("%-13.6g", t[i]) << " " << fmt("%+.3f", percent[i]) << "\n";
  return os.str();
}

std::string RelativeChange::to_csv() const {
  std::ostringstream os;
  os << "t,percent\n";
  for (std::size_t i = 0; i < t.size(); ++i) os << fmt("%.17g", t[i]) << "," << fmt("%.17g", percent[i]) << "\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

}  // namespace fpmc
