#include "mlstm/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "mlstm/error.hpp"
#include "mlstm/eval.hpp"

namespace mlstm {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Robust: return "robust";
    case TrainMode::MeanImpute: return "mean-impute";
    case TrainMode::ForwardImpute: return "forward-impute";
  }
  return "?";
}

std::optional<TrainMode> parse_train_mode(std::string_view text) {
  for (auto mode : {TrainMode::Robust, TrainMode::MeanImpute, TrainMode::ForwardImpute}) {
    if (text == to_string(mode)) return mode;
  }
  return std::nullopt;
}

NormFactors NormFactors::ones(std::size_t J, std::size_t N, std::size_t M) {
  return {J, N, M, std::vector<double>(J, 1.0), std::vector<double>(J * M, 1.0), std::vector<double>(J * N, 1.0)};
}

NormFactors compute_norm_factors(const MaskedBatch& batch) {
  NormFactors nf = NormFactors::ones(batch.J, batch.N, batch.M);
  const auto T = static_cast<double>(batch.T);
  for (std::size_t j = 0; j < batch.J; ++j) {
    std::size_t total = 0;
    for (std::size_t n = 0; n < batch.N; ++n) {
      const std::size_t count = batch.observed_inputs(j, n);
      total += count;
      if (count > 0) nf.beta_n[j * batch.N + n] = static_cast<double>(count) / T;
    }
    if (total > 0) nf.beta_x[j] = static_cast<double>(total) / (T * static_cast<double>(batch.N));
    for (std::size_t m = 0; m < batch.M; ++m) {
      const std::size_t count = batch.observed_targets(j, m);
      if (count > 0) nf.beta_m[j * batch.M + m] = static_cast<double>(count) / T;
    }
  }
  return nf;
}

LossResult loss_and_output_grad(const Prediction& y, const MaskedBatch& batch, const NormFactors& nf) {
  if (y.J != batch.J || y.T != batch.T || y.M != batch.M || nf.J != batch.J || nf.M != batch.M) {
    throw StructuralError("loss_and_output_grad: shape mismatch between prediction, batch and factors");
  }
  LossResult r;
  r.dy.assign(y.y.size(), 0.0);
  r.per_subject.assign(batch.J, 0.0);
  const double jt = static_cast<double>(batch.J * batch.T);
  for (std::size_t j = 0; j < batch.J; ++j) {
    double subject = 0.0;
    for (std::size_t t = 0; t < batch.T; ++t) {
      for (std::size_t m = 0; m < batch.M; ++m) {
        const std::size_t k = batch.si(j, t, m);
        if (!batch.s_mask[k]) continue;
        const double w = 1.0 / (nf.bx(j) * nf.bm(j, m));
        const double diff = y.y[k] - batch.s[k];
        subject += w * diff * diff;
        r.dy[k] = w * diff / jt;
      }
    }
    r.per_subject[j] = subject / (2.0 * jt);
    r.loss += r.per_subject[j];
  }
  return r;
}

Gradients backward(const LstmParams& p, const ForwardCache& cache, std::span<const double> dy,
                   const MaskedBatch& batch, const NormFactors& nf, const BackwardOptions& options) {
  const std::size_t J = cache.J, T = cache.T, M = cache.M, N = p.N;
  if (batch.J != J || batch.T != T || batch.N != N || dy.size() != J * T * M || nf.J != J) {
    throw StructuralError("backward: cache, batch, dy and factors disagree on shape");
  }
  Gradients g{LstmParams::zeros(N, M), {}};
  if (options.compute_dx) g.dx.assign(J * T * N, 0.0);
  LstmParams& d = g.d;

  // Deltas at t + 1; zero beyond the last step.
  std::vector<double> df_next(M), di_next(M), dz_next(M), do_next(M), dc_next(M), fg_next(M);
  std::vector<double> dh(M), dc(M), df(M), di(M), dz(M), d_o(M), x_scaled(N);

  for (std::size_t j = 0; j < J; ++j) {
    std::fill(df_next.begin(), df_next.end(), 0.0);
    std::fill(di_next.begin(), di_next.end(), 0.0);
    std::fill(dz_next.begin(), dz_next.end(), 0.0);
    std::fill(do_next.begin(), do_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    std::fill(fg_next.begin(), fg_next.end(), 0.0);

    for (std::size_t t = T; t-- > 0;) {
      const auto fg = cache.view(cache.fg, j, t);
      const auto ig = cache.view(cache.ig, j, t);
      const auto zg = cache.view(cache.zg, j, t);
      const auto og = cache.view(cache.og, j, t);
      const auto c = cache.view(cache.c, j, t);
      const auto ct = cache.view(cache.ct, j, t);

      // dh = U^T d(gates)^{t+1} + dy^t
      for (std::size_t m = 0; m < M; ++m) dh[m] = dy[(j * T + t) * M + m];
      matvec_t_acc(p.U_f, df_next, dh);
      matvec_t_acc(p.U_i, di_next, dh);
      matvec_t_acc(p.U_c, dz_next, dh);
      matvec_t_acc(p.U_o, do_next, dh);

      for (std::size_t m = 0; m < M; ++m) {
        const double d_og = dh[m] * ct[m];
        d_o[m] = d_og * og[m] * (1.0 - og[m]);
        const double d_ct = dh[m] * og[m];
        dc[m] = p.V_f[m] * df_next[m] + p.V_i[m] * di_next[m] + p.V_o[m] * d_o[m] +
                d_ct * (1.0 - ct[m] * ct[m]) + dc_next[m] * fg_next[m];
        const double d_zg = dc[m] * ig[m];
        dz[m] = d_zg * (1.0 - zg[m] * zg[m]);
        const double d_ig = dc[m] * zg[m];
        di[m] = d_ig * ig[m] * (1.0 - ig[m]);
        const double c_prev = t > 0 ? cache.c[cache.at(j, t - 1) + m] : 0.0;
        const double d_fg = dc[m] * c_prev;
        df[m] = d_fg * fg[m] * (1.0 - fg[m]);
      }

      // Input weights: column n weighted by 1 / beta_n of this subject.
      const auto x = batch.x_step(j, t);
      for (std::size_t n = 0; n < N; ++n) x_scaled[n] = x[n] / nf.bn(j, n);
      outer_acc(df, x_scaled, d.W_f);
      outer_acc(di, x_scaled, d.W_i);
      outer_acc(dz, x_scaled, d.W_c);
      outer_acc(d_o, x_scaled, d.W_o);

      if (t > 0) {
        const auto h_prev = cache.view(cache.h, j, t - 1);
        const auto c_prev = cache.view(cache.c, j, t - 1);
        outer_acc(df, h_prev, d.U_f);
        outer_acc(di, h_prev, d.U_i);
        outer_acc(dz, h_prev, d.U_c);
        outer_acc(d_o, h_prev, d.U_o);
        for (std::size_t m = 0; m < M; ++m) {
          d.V_f[m] += df[m] * c_prev[m];
          d.V_i[m] += di[m] * c_prev[m];
        }
      }
      for (std::size_t m = 0; m < M; ++m) {
        d.V_o[m] += d_o[m] * c[m];
        d.b_f[m] += df[m];
        d.b_i[m] += di[m];
        d.b_c[m] += dz[m];
        d.b_o[m] += d_o[m];
      }

      if (options.compute_dx) {
        std::span<double> dx(g.dx.data() + (j * T + t) * N, N);
        matvec_t_acc(p.W_f, df, dx);
        matvec_t_acc(p.W_i, di, dx);
        matvec_t_acc(p.W_c, dz, dx);
        matvec_t_acc(p.W_o, d_o, dx);
      }

      std::swap(df_next, df);
      std::swap(di_next, di);
      std::swap(dz_next, dz);
      std::swap(do_next, d_o);
      std::swap(dc_next, dc);
      std::copy(fg.begin(), fg.end(), fg_next.begin());
    }
  }

  if (options.corrupt_vo) {
    for (std::size_t m = 0; m < M; ++m) d.V_o[m] = 1.5 * d.V_o[m] + 1e-3;
  }
  for (const auto& a : std::as_const(d).arrays()) {
    if (!all_finite(a.values)) throw NumericError("backward: non-finite gradient for " + std::string(a.name));
  }
  return g;
}

void optimizer_step(LstmParams& params, const Gradients& grads, OptState& state) {
  const auto& cfg = state.config;
  auto weights = params.arrays();
  auto velocity = state.velocity.arrays();
  const auto gradient = grads.d.arrays();
  if (weights.size() != gradient.size()) throw StructuralError("optimizer_step: layout mismatch");
  for (std::size_t a = 0; a < weights.size(); ++a) {
    auto w = weights[a].values;
    auto v = velocity[a].values;
    auto g = gradient[a].values;
    if (w.size() != g.size() || w.size() != v.size()) {
      throw StructuralError("optimizer_step: shape mismatch in " + std::string(weights[a].name));
    }
    bool decay = true;
    if (weights[a].kind == LstmParams::Kind::Bias) decay = cfg.decay_biases;
    if (weights[a].kind == LstmParams::Kind::Peephole) decay = cfg.decay_peepholes;
    const double gamma = decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] - cfg.learning_rate * (g[i] + gamma * w[i]);
      w[i] += v[i];
    }
  }
}

ImputeStats imputation_stats(const MaskedBatch& train) {
  ImputeStats stats;
  for (std::size_t n = 0; n < train.N; ++n) {
    std::vector<double> values;
    for (std::size_t j = 0; j < train.J; ++j) {
      for (std::size_t slot = 0; slot < train.slots(); ++slot) {
        if (auto v = train.slot_value(j, slot, n)) values.push_back(*v);
      }
    }
    if (values.empty()) {
      throw DataError("imputation_stats: biomarker '" + train.biomarker_names.at(n) + "' has no training values");
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    stats.mean.push_back(sum / static_cast<double>(values.size()));
    std::sort(values.begin(), values.end());
    const std::size_t h = values.size() / 2;
    stats.median.push_back(values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]));
  }
  return stats;
}

MaskedBatch impute_mean(const MaskedBatch& batch, const ImputeStats& stats) {
  MaskedBatch out = batch;
  for (std::size_t j = 0; j < out.J; ++j) {
    for (std::size_t slot = 0; slot < out.slots(); ++slot) {
      for (std::size_t n = 0; n < out.N; ++n) {
        if (!out.slot_value(j, slot, n)) out.set_slot(j, slot, n, stats.mean.at(n));
      }
    }
  }
  return out;
}

MaskedBatch impute_forward(const MaskedBatch& batch, const ImputeStats& stats) {
  MaskedBatch out = batch;
  for (std::size_t j = 0; j < out.J; ++j) {
    for (std::size_t n = 0; n < out.N; ++n) {
      double carry = stats.median.at(n);
      for (std::size_t slot = 0; slot < out.slots(); ++slot) {
        if (auto v = out.slot_value(j, slot, n)) {
          carry = *v;
        } else {
          out.set_slot(j, slot, n, carry);
        }
      }
    }
  }
  return out;
}

MaskedBatch prepare_batch(const MaskedBatch& batch, TrainMode mode, const ImputeStats& stats) {
  switch (mode) {
    case TrainMode::MeanImpute: return impute_mean(batch, stats);
    case TrainMode::ForwardImpute: return impute_forward(batch, stats);
    case TrainMode::Robust: break;
  }
  return batch;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw StructuralError("TrainConfig: epochs must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw StructuralError("TrainConfig: learning rate must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) throw StructuralError("TrainConfig: weight decay must be >= 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
    throw StructuralError("TrainConfig: momentum must be in [0, 1)");
  }
  if (!(init_lo < init_hi)) throw StructuralError("TrainConfig: init range must satisfy lo < hi");
}

TrainResult train(const MaskedBatch& batch, const TrainConfig& cfg, const std::optional<Validation>& validation) {
  cfg.validate();
  if (batch.J == 0) throw DataError("train: empty training batch");
  batch.check_invariants();
  Rng rng(cfg.seed);
  TrainResult result;
  result.params = init_params(rng, batch.N, batch.M, cfg.init_lo, cfg.init_hi);
  const NormFactors nf = cfg.mode == TrainMode::Robust ? compute_norm_factors(batch)
                                                        : NormFactors::ones(batch.J, batch.N, batch.M);
  OptState state(cfg.optimizer, batch.N, batch.M);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossResult loss;
    try {
      const auto fwd = forward_sequence(result.params, batch);
      loss = loss_and_output_grad(fwd.prediction, batch, nf);
      if (!std::isfinite(loss.loss)) throw NumericError("loss became non-finite");
      const auto grads = backward(result.params, fwd.cache, loss.dy, batch, nf);
      optimizer_step(result.params, grads, state);
    } catch (const NumericError& e) {
      throw NumericError("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }

    EpochRecord rec{epoch, loss.loss, {}};
    if (validation) {
      const auto report = mae(predict(result.params, validation->inputs), validation->targets, validation->scaling);
      for (const auto& v : report.mae) rec.val_mae.push_back(v.value_or(std::nan("")));
      if (cfg.patience > 0 && report.normalized_average) {
        if (*report.normalized_average < best) {
          best = *report.normalized_average;
          since_best = 0;
        } else if (++since_best >= cfg.patience) {
          result.history.push_back(std::move(rec));
          result.stopped_early = true;
          break;
        }
      }
    }
    result.history.push_back(std::move(rec));
  }
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, std::span<const std::string> biomarkers,
                       std::ostream& out) {
  const bool with_val = !history.empty() && !history.front().val_mae.empty();
  out << "epoch,train_loss";
  if (with_val) {
    for (const auto& name : biomarkers) out << ",val_mae_" << name;
  }
  out << '\n';
  for (const auto& rec : history) {
    out << rec.epoch << ',' << format_double(rec.train_loss);
    for (double v : rec.val_mae) {
      out << ',';
      if (std::isfinite(v)) out << format_double(v);
    }
    out << '\n';
  }
}

MaskedBatch random_masked_batch(Rng& rng, std::size_t J, std::size_t T, std::size_t N, std::size_t M,
                                double missing_x, double missing_s) {
  MaskedBatch b;
  b.J = J;
  b.T = T;
  b.N = N;
  b.M = M;
  b.x.assign(J * T * N, 0.0);
  b.x_mask.assign(b.x.size(), 0);
  b.s.assign(J * T * M, 0.0);
  b.s_mask.assign(b.s.size(), 0);
  b.labels.assign(J * (T + 1), std::nullopt);
  for (std::size_t j = 0; j < J; ++j) b.subject_ids.push_back("R" + std::to_string(1000 + j));
  for (std::size_t n = 0; n < N; ++n) b.biomarker_names.push_back("b" + std::to_string(n));
  // Inputs and targets are masked independently here, unlike a tensorized
  // cohort where they share grid slots.
  for (std::size_t i = 0; i < b.x.size(); ++i) {
    const double v = rng.uniform(-1.0, 1.0);
    if (rng.uniform() >= missing_x) {
      b.x[i] = v;
      b.x_mask[i] = 1;
    }
  }
  for (std::size_t i = 0; i < b.s.size(); ++i) {
    const double v = rng.uniform(-1.0, 1.0);
    if (rng.uniform() >= missing_s) {
      b.s[i] = v;
      b.s_mask[i] = 1;
    }
  }
  return b;
}

GradCheckReport grad_check(const LstmParams& p, const MaskedBatch& batch, double epsilon, double tolerance,
                           bool corrupt_vo) {
  const NormFactors nf = compute_norm_factors(batch);
  const auto fwd = forward_sequence(p, batch);
  const auto loss = loss_and_output_grad(fwd.prediction, batch, nf);
  BackwardOptions opts;
  opts.corrupt_vo = corrupt_vo;
  const Gradients analytic = backward(p, fwd.cache, loss.dy, batch, nf, opts);

  LstmParams probe = p;
  auto probe_arrays = probe.arrays();
  const auto grad_arrays = analytic.d.arrays();
  GradCheckReport report;
  for (std::size_t a = 0; a < probe_arrays.size(); ++a) {
    auto& arr = probe_arrays[a];
    GradCheckEntry entry{std::string(arr.name), 0.0, 0.0};
    for (std::size_t k = 0; k < arr.values.size(); ++k) {
      const double saved = arr.values[k];
      arr.values[k] = saved + epsilon;
      const auto plus = loss_and_output_grad(predict(probe, batch), batch, nf).per_subject;
      arr.values[k] = saved - epsilon;
      const auto minus = loss_and_output_grad(predict(probe, batch), batch, nf).per_subject;
      arr.values[k] = saved;

      const std::size_t col = k % arr.cols;
      double numeric = 0.0;
      for (std::size_t j = 0; j < batch.J; ++j) {
        double dj = (plus[j] - minus[j]) / (2.0 * epsilon);
        if (arr.kind == LstmParams::Kind::Input) dj /= nf.bn(j, col);
        numeric += dj;
      }
      const double exact = grad_arrays[a].values[k];
      const double abs_err = std::abs(exact - numeric);
      const double rel_err = abs_err / std::max({std::abs(exact), std::abs(numeric), 1e-8});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
    }
    if (entry.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst = entry.name;
    }
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check(const GradCheckConfig& cfg) {
  Rng rng(cfg.seed);
  const LstmParams p = init_params(rng, cfg.N, cfg.M, -0.5, 0.5);
  const MaskedBatch batch = random_masked_batch(rng, cfg.J, cfg.T, cfg.N, cfg.M, cfg.missing_x, cfg.missing_s);
  return grad_check(p, batch, cfg.epsilon, cfg.tolerance, cfg.corrupt_vo);
}

}  // namespace mlstm
