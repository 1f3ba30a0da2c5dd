#include "fpmc/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "fpmc/digest.hpp"
#include "fpmc/parallel.hpp"

namespace fpmc {

namespace {

// Support rows of one source gathered into a dense block.
struct PreparedSource {
  Batch x;
  Vec logw;
  std::vector<Index> members;  // estimators using this source
};

std::vector<PreparedSource> prepare(const FpmcStep& base, const std::vector<SourceMeasure>& sources) {
  if (sources.size() != base.sources.size()) throw ValidationError("source list does not match the step");
  std::vector<PreparedSource> out(sources.size());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& sup = sources[s].support();
    const Batch& img = sources[s].dataset().images();
    out[s].x.resize(static_cast<Index>(sup.size()), img.cols());
    out[s].logw.resize(static_cast<Index>(sup.size()));
    for (std::size_t i = 0; i < sup.size(); ++i) {
      out[s].x.row(static_cast<Index>(i)) = img.row(sup[i]);
      out[s].logw[static_cast<Index>(i)] = sources[s].log_weights()[i];
    }
  }
  for (Index l = 0; l < base.size(); ++l) out[base.source_of[static_cast<std::size_t>(l)]].members.push_back(l);
  return out;
}

// Column-wise max-subtracted softmax, flushing tiny weights to 0.
void softmax_columns(Batch& a) {
  for (Index j = 0; j < a.cols(); ++j) {
    auto col = a.col(j);
    const double mx = col.maxCoeff();
    if (!std::isfinite(mx)) throw NumericalError("posterior log-weights are not finite");
    col = (col.array() - mx).exp();
    col /= col.sum();
    for (Index i = 0; i < col.size(); ++i) {
      if (col[i] < 1e-300) col[i] = 0.0;
    }
  }
}

Batch gather_rows(const Batch& m, const std::vector<Index>& rows) {
  Batch out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

struct PerSample {
  Batch rsq;  // (alpha x_i - z)^2, support x d
  Batch w;    // posterior weights, support x members
  Batch mu;   // members x d
};

void evaluate_source(const PreparedSource& src, const Batch& q_s, const double* z, double alpha, double sigma,
                     PerSample& ps) {
  const Index d = src.x.cols();
  const Eigen::Map<const Eigen::RowVectorXd> zr(z, d);
  ps.rsq = ((alpha * src.x).rowwise() - zr).array().square().matrix();
  ps.w = (ps.rsq * q_s.transpose()) * (-0.5 / (sigma * sigma));
  ps.w.colwise() += src.logw;
  softmax_columns(ps.w);
  ps.mu = ps.w.transpose() * src.x;
}

}  // namespace

FinetuneMode parse_finetune_mode(const std::string& text) {
  if (text == "q") return FinetuneMode::Q;
  if (text == "r") return FinetuneMode::R;
  if (text == "joint") return FinetuneMode::Joint;
  throw ValidationError("fine-tuning mode must be q, r or joint, got '" + text + "'");
}

std::string to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::Q: return "q";
    case FinetuneMode::R: return "r";
    case FinetuneMode::Joint: return "joint";
  }
  return "joint";
}

LogParams init_log_params(const FpmcStep& base, FinetuneMode mode, double floor) {
  if (!(floor > 0.0)) throw ValidationError("parameter floor must be positive");
  LogParams p;
  p.mode = mode;
  p.theta = base.Q.array().max(floor).log().matrix();
  p.phi = base.R.array().max(floor).log().matrix();
  return p;
}

Batch effective_q(const LogParams& p, const FpmcStep& base) {
  return p.trains_q() ? Batch(p.theta.array().exp().matrix()) : base.Q;
}

Batch effective_r(const LogParams& p, const FpmcStep& base) {
  return p.trains_r() ? Batch(p.phi.array().exp().matrix()) : base.R;
}

FpmcStep apply_params(const LogParams& p, const FpmcStep& base) {
  FpmcStep out = base;
  out.Q = effective_q(p, base);
  out.R = effective_r(p, base);
  return out;
}

SourceMeasure masked_source(const SourceMeasure& nu, const std::vector<Index>& batch) {
  if (batch.empty()) return nu;
  const std::unordered_set<std::int64_t> drop(batch.begin(), batch.end());
  std::vector<Index> rows;
  const Dataset& ds = nu.dataset();
  for (Index i = 0; i < ds.size(); ++i) {
    if (drop.count(ds.origin(i))) rows.push_back(i);
  }
  try {
    return nu.without(rows);
  } catch (const ValidationError&) {
    throw ValidationError("leave-batch-out masking empties the source measure");
  }
}

SourceMeasure mc_subsample(const SourceMeasure& nu, Index k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("Monte-Carlo support size must be >= 1");
  const auto& sup = nu.support();
  if (static_cast<std::size_t>(k) >= sup.size()) return nu;
  // Weighted sampling without replacement: keep the k largest u^(1/w).
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<double, Index>> keys;
  keys.reserve(sup.size());
  for (std::size_t i = 0; i < sup.size(); ++i) {
    const double u = std::max(unif(rng), 1e-300);
    keys.emplace_back(std::log(u) / nu.weights()[sup[i]], sup[i]);
  }
  std::partial_sort(keys.begin(), keys.begin() + k, keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  Vec w = Vec::Zero(nu.dataset().size());
  std::vector<std::uint8_t> active(static_cast<std::size_t>(nu.dataset().size()), 0);
  for (Index i = 0; i < k; ++i) {
    w[keys[static_cast<std::size_t>(i)].second] = 1.0;
    active[static_cast<std::size_t>(keys[static_cast<std::size_t>(i)].second)] = 1;
  }
  return SourceMeasure(nu.dataset_ptr(), std::move(w), std::move(active));
}

namespace {

// Loss, output and raw gradients with respect to Q and R.
Objective step_objective(const Batch& Q, const Batch& R, const FpmcStep& base, const std::vector<SourceMeasure>& sources,
                         const Batch& z, const Batch& target, const DiffusionSchedule& sched, double lambda, bool gq,
                         bool gr) {
  const Index L = base.size();
  const Index d = base.Q.cols();
  const Index B = z.rows();
  if (B < 1) throw ValidationError("empty training batch");
  if (z.cols() != d || target.rows() != B || target.cols() != d) throw ValidationError("batch shape mismatch");
  const double t = base.t;
  if (!(t > 0.0)) throw ValidationError("time must be positive");
  const double alpha = sched.alpha(t);
  const double sigma = sched.sigma(t);
  const Vec S = R.colwise().sum().transpose();
  for (Index k = 0; k < d; ++k) {
    if (!(S[k] > 0.0)) throw ValidationError("coverage violation at dimension " + std::to_string(k));
  }
  const auto prepared = prepare(base, sources);
  std::vector<Batch> q_by_source, r_by_source;
  for (const auto& ps : prepared) {
    q_by_source.push_back(gather_rows(Q, ps.members));
    r_by_source.push_back(gather_rows(R, ps.members));
  }

  Objective out;
  out.denoised.resize(B, d);
  parallel_for(B, [&](Index b) {
    Vec num = Vec::Zero(d);
    PerSample ps;
    for (std::size_t s = 0; s < prepared.size(); ++s) {
      if (prepared[s].members.empty()) continue;
      evaluate_source(prepared[s], q_by_source[s], z.data() + b * d, alpha, sigma, ps);
      num += (r_by_source[s].array() * ps.mu.array()).colwise().sum().matrix().transpose();
    }
    out.denoised.row(b) = (num.array() / S.array()).transpose();
  });
  const Batch diff = out.denoised - target;
  out.loss = lambda * diff.squaredNorm() / static_cast<double>(B);
  if (!std::isfinite(out.loss)) throw NumericalError("fine-tuning loss is not finite at t=" + std::to_string(t));
  if (!gq && !gr) return out;

  // Per-sample contributions are buffered in chunks and reduced in batch
  // order, so results do not depend on the thread count.
  Batch dQ = Batch::Zero(gq ? L : 0, d);
  Batch dR = Batch::Zero(gr ? L : 0, d);
  const double coef = 2.0 * lambda / static_cast<double>(B);
  const Index per_sample = L * d * ((gq ? 1 : 0) + (gr ? 1 : 0));
  const Index chunk = std::clamp<Index>((Index{1} << 24) / std::max<Index>(per_sample, 1), 1, B);
  std::vector<Batch> bufQ(static_cast<std::size_t>(chunk)), bufR(static_cast<std::size_t>(chunk));
  for (Index b0 = 0; b0 < B; b0 += chunk) {
    const Index nb = std::min(chunk, B - b0);
    parallel_for(nb, [&](Index j) {
      const Index b = b0 + j;
      const Vec g = coef * diff.row(b).transpose();
      const Vec Db = out.denoised.row(b).transpose();
      Batch& lq = bufQ[static_cast<std::size_t>(j)];
      Batch& lr = bufR[static_cast<std::size_t>(j)];
      if (gq) lq.setZero(L, d);
      if (gr) lr.setZero(L, d);
      PerSample ps;
      for (std::size_t s = 0; s < prepared.size(); ++s) {
        const auto& members = prepared[s].members;
        if (members.empty()) continue;
        evaluate_source(prepared[s], q_by_source[s], z.data() + b * d, alpha, sigma, ps);
        const Eigen::RowVectorXd g_over_s = (g.array() / S.array()).matrix().transpose();
        if (gr) {
          for (std::size_t m = 0; m < members.size(); ++m) {
            lr.row(members[m]) = (ps.mu.row(static_cast<Index>(m)) - Db.transpose()).cwiseProduct(g_over_s);
          }
        }
        if (gq) {
          // h_l = g * r_l / S; dL/da_i = w_i (h.x_i - h.mu); dL/dq = -(rsq^T c) / (2 sigma^2).
          const Batch H = r_by_source[s].array().rowwise() * g_over_s.array();
          const Vec h_mu = (H.array() * ps.mu.array()).rowwise().sum();
          Batch C = prepared[s].x * H.transpose();
          C.rowwise() -= h_mu.transpose();
          C.array() *= ps.w.array();
          const Batch gsrc = (C.transpose() * ps.rsq) * (-0.5 / (sigma * sigma));
          for (std::size_t m = 0; m < members.size(); ++m) lq.row(members[m]) = gsrc.row(static_cast<Index>(m));
        }
      }
    });
    for (Index j = 0; j < nb; ++j) {
      if (gq) dQ += bufQ[static_cast<std::size_t>(j)];
      if (gr) dR += bufR[static_cast<std::size_t>(j)];
    }
  }
  out.grad_theta = std::move(dQ);
  out.grad_phi = std::move(dR);
  return out;
}

}  // namespace

Objective finetune_objective(const LogParams& p, const FpmcStep& base, const std::vector<SourceMeasure>& sources,
                             const Batch& z, const Batch& target, const DiffusionSchedule& sched, double lambda,
                             bool with_grad) {
  const Index L = base.size();
  const Index d = base.Q.cols();
  if ((p.trains_q() && (p.theta.rows() != L || p.theta.cols() != d)) ||
      (p.trains_r() && (p.phi.rows() != L || p.phi.cols() != d))) {
    throw ValidationError("parameter shape does not match the step");
  }
  const Batch Q = effective_q(p, base);
  const Batch R = effective_r(p, base);
  Objective out = step_objective(Q, R, base, sources, z, target, sched, lambda, with_grad && p.trains_q(),
                                 with_grad && p.trains_r());
  // Chain rule through q = exp(theta), r = exp(phi).
  if (out.grad_theta.size() > 0) out.grad_theta = out.grad_theta.cwiseProduct(Q);
  if (out.grad_phi.size() > 0) out.grad_phi = out.grad_phi.cwiseProduct(R);
  return out;
}

namespace {

Objective batch_objective(const LogParams& p, const FpmcStep& base, const TrainBatch& batch, const Denoiser& target,
                          const DiffusionSchedule& sched, double lambda, bool leave_batch_out, bool with_grad) {
  std::vector<SourceMeasure> sources;
  for (const auto& nu : base.sources) sources.push_back(leave_batch_out ? masked_source(nu, batch.indices) : nu);
  const Batch y = target.denoise(batch.z, base.t);
  return finetune_objective(p, base, sources, batch.z, y, sched, lambda, with_grad);
}

}  // namespace

double finetune_loss(const LogParams& p, const FpmcStep& base, const TrainBatch& batch, const Denoiser& target,
                     const DiffusionSchedule& sched, double lambda, bool leave_batch_out) {
  return batch_objective(p, base, batch, target, sched, lambda, leave_batch_out, false).loss;
}

Objective finetune_grad(const LogParams& p, const FpmcStep& base, const TrainBatch& batch, const Denoiser& target,
                        const DiffusionSchedule& sched, double lambda, bool leave_batch_out) {
  return batch_objective(p, base, batch, target, sched, lambda, leave_batch_out, true);
}

void adamw_step(AdamWState& state, Batch& params, const Batch& grad, const AdamWConfig& cfg) {
  if (grad.rows() != params.rows() || grad.cols() != params.cols()) throw ValidationError("gradient shape mismatch");
  if (!grad.allFinite()) throw NumericalError("non-finite gradient at optimizer step " + std::to_string(state.step + 1));
  if (state.m.size() == 0) {
    state.m = Batch::Zero(params.rows(), params.cols());
    state.v = Batch::Zero(params.rows(), params.cols());
  }
  ++state.step;
  params *= 1.0 - cfg.learning_rate * cfg.weight_decay;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.learning_rate * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + cfg.epsilon);
}

double validation_mse(const FpmcStep& step, const Batch& z, const Batch& target, const DiffusionSchedule& sched) {
  const Batch out = step_objective(step.Q, step.R, step, step.sources, z, target, sched, 1.0, false, false).denoised;
  return (out - target).squaredNorm() / static_cast<double>(out.size());
}

namespace {

Batch gaussian_batch(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch eps(rows, cols);
  for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  return eps;
}

}  // namespace

FinetuneResult finetune_run(const FpmcModel& model, std::size_t step_index, const Denoiser& target,
                            const DatasetPtr& train, const FinetuneConfig& config) {
  if (!train) throw ValidationError("fine-tuning needs a training dataset");
  if (config.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(config.adam.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (config.max_steps < 0) throw ValidationError("max_steps must be >= 0");
  if (!(train->geometry() == model.geometry())) throw ValidationError("training data geometry does not match the model");
  const FpmcStep& base = model.step(step_index);
  const DiffusionSchedule& sched = model.schedule();
  const double t = base.t;
  const double alpha = sched.alpha(t);
  const double sigma = sched.sigma(t);
  const Index d = model.geometry().dims();
  const Index N = train->size();

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path);
    if (!log_file) throw ValidationError("cannot write fine-tuning log " + config.log_path.string());
  }
  FinetuneResult result;
  auto log = [&](nlohmann::json rec) {
    if (log_file.is_open()) log_file << rec.dump() << "\n";
    result.log.push_back(std::move(rec));
  };

  // Fixed validation set: x from the held-out data, noise from its own stream.
  const DatasetPtr val = config.validation ? config.validation : train;
  if (!(val->geometry() == model.geometry())) throw ValidationError("validation data geometry does not match the model");
  const Index nv = config.validation_size > 0 ? std::min(config.validation_size, val->size()) : val->size();
  std::mt19937_64 val_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const Batch z_val = alpha * val->images().topRows(nv) + sigma * gaussian_batch(val_rng, nv, d);
  const Batch y_val = target.denoise(z_val, t);

  LogParams params = init_log_params(base, config.mode);
  result.params = params;
  result.step = base;
  result.baseline_val_mse = validation_mse(base, z_val, y_val, sched);
  result.best_val_mse = result.baseline_val_mse;
  log({{"epoch", 0}, {"step", 0}, {"val_mse", result.baseline_val_mse}});

  std::mt19937_64 rng(config.seed);
  AdamWState state_q, state_r;
  const Index B = std::min(config.batch_size, N);
  const long steps_per_epoch = static_cast<long>((N + B - 1) / B);
  std::vector<Index> order(static_cast<std::size_t>(N));
  long epoch = 0;
  for (long step = 0; step < config.max_steps;) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    ++epoch;
    for (long k = 0; k < steps_per_epoch && step < config.max_steps; ++k, ++step) {
      TrainBatch batch;
      const Index begin = static_cast<Index>(k) * B;
      const Index count = std::min(B, N - begin);
      batch.indices.assign(order.begin() + begin, order.begin() + begin + count);
      const Batch eps = gaussian_batch(rng, count, d);
      Batch x(count, d);
      for (Index i = 0; i < count; ++i) x.row(i) = train->row(batch.indices[static_cast<std::size_t>(i)]);
      batch.z = alpha * x + sigma * eps;

      std::vector<SourceMeasure> sources;
      for (std::size_t s = 0; s < base.sources.size(); ++s) {
        SourceMeasure nu = config.leave_batch_out ? masked_source(base.sources[s], batch.indices) : base.sources[s];
        if (config.mc_support_size > 0) nu = mc_subsample(nu, config.mc_support_size, rng());
        sources.push_back(std::move(nu));
      }
      const Batch y = target.denoise(batch.z, t);
      const Objective obj = finetune_objective(params, base, sources, batch.z, y, sched, config.loss_weight, true);
      if (!std::isfinite(obj.loss)) {
        throw NumericalError("non-finite loss at optimizer step " + std::to_string(step + 1) + " (t=" + std::to_string(t) + ")");
      }
      if (params.trains_q()) adamw_step(state_q, params.theta, obj.grad_theta, config.adam);
      if (params.trains_r()) adamw_step(state_r, params.phi, obj.grad_phi, config.adam);
      if ((params.trains_q() && !params.theta.allFinite()) || (params.trains_r() && !params.phi.allFinite())) {
        throw NumericalError("parameters became non-finite at optimizer step " + std::to_string(step + 1));
      }
      log({{"step", step + 1},
           {"loss", obj.loss},
           {"batch", batch.indices},
           {"eps_sha256", sha256_batch(eps)}});
    }
    const FpmcStep candidate = apply_params(params, base);
    const double mse = validation_mse(candidate, z_val, y_val, sched);
    log({{"epoch", epoch}, {"step", step}, {"val_mse", mse}});
    if (mse < result.best_val_mse) {
      result.best_val_mse = mse;
      result.best_step = step;
      result.step = candidate;
      result.params = params;
    }
  }
  return result;
}

double reference_weight_decay(const std::string& dataset, double t) {
  double threshold = 0.0;
  if (dataset == "cifar10") {
    threshold = 1.92;
  } else if (dataset == "ffhq64") {
    threshold = 4.37;
  } else if (dataset == "afhq64") {
    threshold = 8.03;
  } else {
    throw ValidationError("no reference weight decay for dataset " + dataset);
  }
  // Tabulated times are rounded to three figures.
  return t >= threshold * (1.0 - 5e-3) ? 0.01 : 0.0;
}

}  // namespace fpmc
