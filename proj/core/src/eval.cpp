#include "mlstm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <utility>

#include "mlstm/error.hpp"

namespace mlstm {

namespace {

void check_truth(const Prediction& y, const MaskedBatch& truth, const ScalingSpec& scaling) {
  if (y.J != truth.J || y.T != truth.T || y.M != truth.M) {
    throw StructuralError("mae: prediction and target shapes differ");
  }
  if (scaling.size() != truth.M) throw StructuralError("mae: scaling spec does not match biomarker count");
}

}  // namespace

MaeReport mae(const Prediction& y, const MaskedBatch& truth, const ScalingSpec& scaling) {
  check_truth(y, truth, scaling);
  MaeReport report;
  report.names = scaling.names;
  double norm_sum = 0.0;
  std::size_t norm_count = 0;
  for (std::size_t m = 0; m < truth.M; ++m) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < truth.J; ++j) {
      for (std::size_t t = 0; t < truth.T; ++t) {
        const std::size_t k = truth.si(j, t, m);
        if (!truth.s_mask[k]) continue;
        sum += std::abs(scaling.invert(m, y.y[k]) - scaling.invert(m, truth.s[k]));
        ++count;
      }
    }
    report.count.push_back(count);
    if (count == 0) {
      report.mae.emplace_back();
      continue;
    }
    const double value = sum / static_cast<double>(count);
    report.mae.emplace_back(value);
    norm_sum += value / scaling.range(m);
    ++norm_count;
  }
  if (norm_count > 0) report.normalized_average = norm_sum / static_cast<double>(norm_count);
  return report;
}

std::vector<double> absolute_errors(const Prediction& y, const MaskedBatch& truth, const ScalingSpec& scaling,
                                    std::size_t biomarker) {
  check_truth(y, truth, scaling);
  std::vector<double> errors;
  for (std::size_t j = 0; j < truth.J; ++j) {
    for (std::size_t t = 0; t < truth.T; ++t) {
      const std::size_t k = truth.si(j, t, biomarker);
      if (truth.s_mask[k]) {
        errors.push_back(std::abs(scaling.invert(biomarker, y.y[k]) - scaling.invert(biomarker, truth.s[k])));
      }
    }
  }
  return errors;
}

void write_mae_csv(const MaeReport& report, std::ostream& out) {
  out << "biomarker,mae,count\n";
  for (std::size_t m = 0; m < report.names.size(); ++m) {
    out << report.names[m] << ',';
    if (report.mae[m]) out << format_double(*report.mae[m]);
    out << ',' << report.count[m] << '\n';
  }
}

LdaModel lda_fit(std::span<const Vector> features, std::span<const int> labels, double shrinkage) {
  if (features.size() != labels.size()) throw StructuralError("lda_fit: features and labels differ in length");
  if (features.empty()) throw StructuralError("lda_fit: no samples");
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw StructuralError("lda_fit: shrinkage must be in [0, 1]");
  const std::size_t dim = features.front().size();
  LdaModel model;
  model.shrinkage = shrinkage;
  model.classes.assign(labels.begin(), labels.end());
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  if (model.classes.size() < 2) throw StructuralError("lda_fit: need at least two classes");

  const std::size_t K = model.classes.size();
  auto class_index = [&](int label) {
    return static_cast<std::size_t>(std::lower_bound(model.classes.begin(), model.classes.end(), label) -
                                    model.classes.begin());
  };
  std::vector<std::size_t> counts(K, 0);
  model.means.assign(K, Vector(dim));
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) throw StructuralError("lda_fit: inconsistent feature length");
    const auto c = class_index(labels[i]);
    ++counts[c];
    for (std::size_t d = 0; d < dim; ++d) model.means[c][d] += features[i][d];
  }
  for (std::size_t c = 0; c < K; ++c) {
    for (std::size_t d = 0; d < dim; ++d) model.means[c][d] /= static_cast<double>(counts[c]);
    model.priors.push_back(static_cast<double>(counts[c]) / static_cast<double>(features.size()));
  }

  Matrix cov(dim, dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& mu = model.means[class_index(labels[i])];
    for (std::size_t r = 0; r < dim; ++r) {
      const double dr = features[i][r] - mu[r];
      for (std::size_t c = 0; c < dim; ++c) cov(r, c) += dr * (features[i][c] - mu[c]);
    }
  }
  const double dof = features.size() > K ? static_cast<double>(features.size() - K) : 1.0;
  for (double& v : cov.span()) v /= dof;
  for (std::size_t r = 0; r < dim; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      if (r != c) cov(r, c) *= (1.0 - shrinkage);
    }
  }
  model.covariance = cov;
  try {
    model.cholesky_factor = cholesky(cov);
  } catch (const NumericError&) {
    throw NumericError("lda_fit: pooled covariance is singular after shrinkage " + std::to_string(shrinkage) +
                       "; use a larger shrinkage");
  }
  return model;
}

std::vector<double> lda_posteriors(const LdaModel& model, const Vector& feature) {
  const std::size_t K = model.classes.size();
  std::vector<double> score(K);
  for (std::size_t c = 0; c < K; ++c) {
    const Vector a = cholesky_solve(model.cholesky_factor, model.means[c]);
    double linear = 0.0, quad = 0.0;
    for (std::size_t d = 0; d < feature.size(); ++d) {
      linear += feature[d] * a[d];
      quad += model.means[c][d] * a[d];
    }
    score[c] = linear - 0.5 * quad + std::log(model.priors[c]);
  }
  const double top = *std::max_element(score.begin(), score.end());
  double total = 0.0;
  for (double& s : score) {
    s = std::exp(s - top);
    total += s;
  }
  for (double& s : score) s /= total;
  return score;
}

int lda_predict(const LdaModel& model, const Vector& feature) {
  const auto post = lda_posteriors(model, feature);
  return model.classes[static_cast<std::size_t>(std::max_element(post.begin(), post.end()) - post.begin())];
}

namespace {

// A(i|k): mid-rank sum of class i's scores in the pooled i/k sample.
double rank_auc(const std::vector<double>& scores_i, const std::vector<double>& scores_k) {
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(scores_i.size() + scores_k.size());
  for (double s : scores_i) pooled.emplace_back(s, true);
  for (double s : scores_k) pooled.emplace_back(s, false);
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  while (pos < pooled.size()) {
    std::size_t end = pos;
    while (end < pooled.size() && pooled[end].first == pooled[pos].first) ++end;
    const double mid = 0.5 * static_cast<double>(pos + 1 + end);
    for (std::size_t q = pos; q < end; ++q) {
      if (pooled[q].second) rank_sum += mid;
    }
    pos = end;
  }
  const auto ni = static_cast<double>(scores_i.size());
  const auto nk = static_cast<double>(scores_k.size());
  return (rank_sum - ni * (ni + 1.0) / 2.0) / (ni * nk);
}

}  // namespace

AucReport multiclass_auc(std::span<const std::vector<double>> posteriors, std::span<const int> labels,
                         std::span<const int> classes) {
  if (posteriors.size() != labels.size()) throw StructuralError("multiclass_auc: posteriors and labels differ");
  AucReport report;
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (std::find(labels.begin(), labels.end(), classes[c]) == labels.end()) {
      report.warnings.push_back("class " + std::to_string(classes[c]) + " has no samples; excluded");
    } else {
      present.push_back(c);
      report.classes.push_back(classes[c]);
    }
  }
  if (present.size() < 2) throw StructuralError("multiclass_auc: need samples from at least two classes");
  for (const auto& row : posteriors) {
    if (row.size() != classes.size()) throw StructuralError("multiclass_auc: posterior row has wrong width");
  }

  // scores[a][b]: p(c_a | s) for samples whose true class is b.
  auto scores_for = [&](std::size_t col, int truth) {
    std::vector<double> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == truth) out.push_back(posteriors[i][col]);
    }
    return out;
  };
  double total = 0.0;
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      const std::size_t ci = present[a], ck = present[b];
      const double a_ik = rank_auc(scores_for(ci, classes[ci]), scores_for(ci, classes[ck]));
      const double a_ki = rank_auc(scores_for(ck, classes[ck]), scores_for(ck, classes[ci]));
      total += a_ik + a_ki;
      report.pairwise.push_back({classes[ci], classes[ck], 0.5 * (a_ik + a_ki)});
    }
  }
  const auto nc = static_cast<double>(present.size());
  report.multiclass = total / (nc * (nc - 1.0));
  return report;
}

RemovalResult remove_observed(const MaskedBatch& batch, double rate, std::uint64_t seed, std::size_t min_inputs) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw StructuralError("remove_observed: rate must be in [0, 1]");
  RemovalResult result{batch, std::vector<std::size_t>(batch.N, 0), std::vector<std::size_t>(batch.N, 0)};
  MaskedBatch& out = result.batch;
  for (std::size_t n = 0; n < batch.N; ++n) {
    struct Cell {
      std::uint64_t key;
      std::size_t j;
      std::size_t slot;
    };
    std::vector<Cell> cells;
    Rng rng(derive_seed(seed, n));
    for (std::size_t j = 0; j < batch.J; ++j) {
      for (std::size_t slot = 0; slot < batch.slots(); ++slot) {
        if (batch.slot_value(j, slot, n)) cells.push_back({rng.next(), j, slot});
      }
    }
    std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.key < b.key; });
    const auto quota = static_cast<std::size_t>(std::floor(rate * static_cast<double>(cells.size()) + 1e-9));
    std::vector<std::size_t> inputs(batch.J);
    for (std::size_t j = 0; j < batch.J; ++j) inputs[j] = batch.observed_inputs(j, n);
    for (const Cell& cell : cells) {
      if (result.removed[n] == quota) break;
      const bool is_input = cell.slot < batch.T;
      if (is_input && inputs[cell.j] <= min_inputs) {
        ++result.exempted[n];
        continue;
      }
      if (is_input) --inputs[cell.j];
      out.set_slot(cell.j, cell.slot, n, std::nullopt);
      ++result.removed[n];
    }
  }
  return result;
}

MethodRun run_method(const MaskedBatch& train_batch, const MaskedBatch& test, const ScalingSpec& scaling,
                     const TrainConfig& cfg) {
  const ImputeStats stats = imputation_stats(train_batch);
  const MaskedBatch prepared = prepare_batch(train_batch, cfg.mode, stats);
  MethodRun run;
  run.training = train(prepared, cfg);
  run.test_prediction = predict(run.training.params, prepare_batch(test, cfg.mode, stats));
  run.test_mae = mae(run.test_prediction, test, scaling);
  return run;
}

SweepResult sweep_missing(const MaskedBatch& train_batch, const MaskedBatch& test, const ScalingSpec& scaling,
                          std::span<const double> rates, const TrainConfig& cfg, std::uint64_t seed,
                          std::span<const TrainMode> methods) {
  static constexpr TrainMode kAll[] = {TrainMode::Robust, TrainMode::MeanImpute, TrainMode::ForwardImpute};
  if (methods.empty()) methods = kAll;
  const std::uint64_t removal_seed = derive_seed(seed, 0x5eedULL);
  SweepResult result;
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate <= 0.5)) throw StructuralError("sweep_missing: rates must lie in [0, 0.5]");
    const auto removal = remove_observed(train_batch, rate, removal_seed);
    for (std::size_t n = 0; n < train_batch.N; ++n) {
      if (removal.exempted[n] > 0) {
        result.log.push_back("rate " + format_double(rate) + ": " + std::to_string(removal.exempted[n]) + " " +
                             train_batch.biomarker_names[n] + " cells exempt to keep the input floor");
      }
    }
    for (TrainMode method : methods) {
      TrainConfig c = cfg;
      c.mode = method;
      const auto run = run_method(removal.batch, test, scaling, c);
      if (!run.test_mae.normalized_average) throw DataError("sweep_missing: test set has no observed targets");
      result.rows.push_back({rate, method, *run.test_mae.normalized_average});
    }
  }
  return result;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << "rate,method,norm_mae\n";
  for (const auto& row : result.rows) {
    out << format_double(row.rate) << ',' << to_string(row.method) << ',' << format_double(row.norm_mae) << '\n';
  }
}

}  // namespace mlstm
