#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>

#include "mlstm/data.hpp"
#include "mlstm/error.hpp"
#include "mlstm/eval.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/stats.hpp"

namespace mlstm::cli {

std::size_t GridOptions::steps() const {
  if (interval <= 0) throw StructuralError("interval must be positive");
  if (horizon <= 0 || horizon % interval != 0) {
    throw StructuralError("horizon (" + std::to_string(horizon) + ") must be a positive multiple of interval (" +
                          std::to_string(interval) + ")");
  }
  return static_cast<std::size_t>(horizon / interval);
}

namespace {

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  const fs::path path = dir / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void require(const fs::path& path, const char* option) {
  if (path.empty()) throw StructuralError(std::string("--") + option + " is required");
}

// Intermediate files are produced by preprocess, so any bad row is fatal.
CohortTable load_clean(const fs::path& path) {
  LoadResult r = load_csv(path);
  if (!r.errors.empty()) {
    const RowError& e = r.errors.front();
    throw DataError(path.string() + ":" + std::to_string(e.line) + ": " + e.message);
  }
  return std::move(r.table);
}

MaskedBatch load_batch(const fs::path& path, const GridOptions& grid) {
  return tensorize(load_clean(path), grid.steps(), grid.interval);
}

void check_scaling(const ScalingSpec& spec, const MaskedBatch& batch, const fs::path& source) {
  if (spec.names != batch.biomarker_names) {
    throw DataError("scaling file does not list the biomarkers of " + source.string());
  }
}

std::string fmt(double v) { return format_double(v); }

std::string label_code(Label l) { return std::string(to_string(l)); }

}  // namespace

void run_preprocess(const PreprocessOptions& opt, std::ostream& log) {
  require(opt.input, "input");
  const std::size_t T = opt.grid.steps();
  if (opt.val_fraction < 0.0 || opt.test_fraction < 0.0 || opt.val_fraction + opt.test_fraction >= 1.0) {
    throw StructuralError("val and test fractions must be non-negative and sum to less than 1");
  }

  LoadResult loaded = load_csv(opt.input);
  CohortTable table = std::move(loaded.table);
  if (opt.icv) {
    if (!table.has_icv) throw DataError("--icv requires an icv column in " + opt.input.string());
    table = normalize_icv(table);
  }
  OutlierResult outliers = filter_outliers(table, opt.outlier_z);
  GridResult grid = resample_grid(outliers.table, opt.grid.interval, opt.grid.horizon);
  CohortTable kept = filter_min_visits(grid.table, opt.min_visits);
  const double train_fraction = 1.0 - opt.val_fraction - opt.test_fraction;
  SplitResult parts = split(kept, {train_fraction, opt.val_fraction, opt.test_fraction, opt.seed});
  if (parts.train.records.empty()) throw DataError("no training subjects left after filtering");
  ScalingSpec scaling = fit_scaling(parts.train);

  std::size_t clipped_val = 0, clipped_test = 0;
  const CohortTable train = apply_scaling(parts.train, scaling);
  const CohortTable val = apply_scaling(parts.val, scaling, &clipped_val);
  const CohortTable test = apply_scaling(parts.test, scaling, &clipped_test);

  {
    auto out = open_out(opt.out_dir, "train.csv");
    write_csv(train, out);
  }
  {
    auto out = open_out(opt.out_dir, "val.csv");
    write_csv(val, out);
  }
  {
    auto out = open_out(opt.out_dir, "test.csv");
    write_csv(test, out);
  }
  save_scaling(scaling, opt.out_dir / "scaling.csv");

  auto report = open_out(opt.out_dir, "preprocess_report.txt");
  report << "input=" << opt.input.filename().string() << '\n'
         << "rows_read=" << table.records.size() << '\n'
         << "rows_rejected=" << loaded.errors.size() << '\n'
         << "subjects_read=" << table.subject_count() << '\n'
         << "outliers_removed=" << outliers.report.removed.size() << '\n'
         << "grid_interval=" << opt.grid.interval << '\n'
         << "grid_slots=" << T + 1 << '\n'
         << "grid_collisions=" << grid.report.collisions.size() << '\n'
         << "grid_dropped=" << grid.report.dropped.size() << '\n'
         << "subjects_kept=" << kept.subject_count() << '\n'
         << "subjects_train=" << parts.train.subject_count() << '\n'
         << "subjects_val=" << parts.val.subject_count() << '\n'
         << "subjects_test=" << parts.test.subject_count() << '\n'
         << "clipped_val=" << clipped_val << '\n'
         << "clipped_test=" << clipped_test << '\n';
  for (const RowError& e : loaded.errors) report << "row_error=" << e.line << ": " << e.message << '\n';
  for (const OutlierCell& c : outliers.report.removed) {
    report << "outlier=" << c.subject_id << ',' << c.visit_month << ',' << table.biomarker_names[c.biomarker]
           << ',' << fmt(c.value) << ",z=" << fmt(c.z) << '\n';
  }
  for (const std::string& w : outliers.report.warnings) report << "warning=" << w << '\n';
  for (const std::string& w : grid.report.collisions) report << "collision=" << w << '\n';
  for (const std::string& w : grid.report.dropped) report << "dropped=" << w << '\n';
  for (const std::string& w : parts.warnings) report << "warning=" << w << '\n';

  for (const RowError& e : loaded.errors) {
    log << "warning: " << opt.input.string() << ":" << e.line << ": " << e.message << '\n';
  }
  log << "preprocess: " << kept.subject_count() << " subjects (" << parts.train.subject_count() << " train, "
      << parts.val.subject_count() << " val, " << parts.test.subject_count() << " test), " << T + 1
      << " slots, " << outliers.report.removed.size() << " outliers removed\n";
}

void run_train(const TrainOptions& opt, std::ostream& log) {
  require(opt.train, "train");
  opt.config.validate();
  const MaskedBatch train_raw = load_batch(opt.train, opt.grid);
  if (train_raw.J == 0) throw DataError("training file has no subjects");
  const ImputeStats stats = imputation_stats(train_raw);
  const MaskedBatch train_batch = prepare_batch(train_raw, opt.config.mode, stats);

  TrainResult result;
  if (!opt.val.empty()) {
    require(opt.scaling, "scaling");
    const ScalingSpec scaling = load_scaling(opt.scaling);
    const MaskedBatch val_raw = load_batch(opt.val, opt.grid);
    check_scaling(scaling, val_raw, opt.val);
    const MaskedBatch val_batch = prepare_batch(val_raw, opt.config.mode, stats);
    result = train(train_batch, opt.config, Validation{val_batch, val_raw, scaling});
  } else {
    if (opt.config.patience > 0) throw StructuralError("--patience needs --val");
    result = train(train_batch, opt.config);
  }

  {
    auto model = open_out(opt.out_dir, "model.mlstm");
    write_model(result.params, model);
  }
  auto history = open_out(opt.out_dir, "history.csv");
  write_history_csv(result.history, train_raw.biomarker_names, history);

  log << "train: mode " << to_string(opt.config.mode) << ", " << result.history.size() << " epochs"
      << (result.stopped_early ? " (stopped early)" : "") << ", final loss "
      << fmt(result.history.empty() ? 0.0 : result.history.back().train_loss) << '\n';
}

namespace {

// Inputs prepared the way the model was trained; statistics from train only.
MaskedBatch prepared(const MaskedBatch& batch, TrainMode mode, const std::optional<ImputeStats>& stats) {
  if (mode == TrainMode::Robust) return batch;
  return prepare_batch(batch, mode, *stats);
}

}  // namespace

void run_predict(const PredictOptions& opt, std::ostream& log) {
  require(opt.model, "model");
  require(opt.input, "input");
  require(opt.scaling, "scaling");
  const LstmParams params = load_model(opt.model);
  const ScalingSpec scaling = load_scaling(opt.scaling);
  const MaskedBatch batch = load_batch(opt.input, opt.grid);
  check_scaling(scaling, batch, opt.input);

  std::optional<ImputeStats> stats;
  if (opt.mode != TrainMode::Robust) {
    if (opt.train.empty()) throw StructuralError("--train is required for mode " + std::string(to_string(opt.mode)));
    stats = imputation_stats(load_batch(opt.train, opt.grid));
  }
  const Prediction y = predict(params, prepared(batch, opt.mode, stats));

  auto out = open_out(opt.out_dir, "predictions.csv");
  out << "subject_id,slot,visit_month,biomarker,predicted,observed\n";
  for (std::size_t j = 0; j < y.J; ++j) {
    for (std::size_t t = 0; t < y.T; ++t) {
      const std::size_t slot = t + 1;
      for (std::size_t m = 0; m < y.M; ++m) {
        out << batch.subject_ids[j] << ',' << slot << ',' << static_cast<int>(slot) * batch.interval_months << ','
            << batch.biomarker_names[m] << ',' << fmt(scaling.invert(m, y.at(j, t, m))) << ',';
        if (batch.s_mask[batch.si(j, t, m)]) out << fmt(scaling.invert(m, batch.s[batch.si(j, t, m)]));
        out << '\n';
      }
    }
  }
  log << "predict: " << y.J << " subjects x " << y.T << " steps x " << y.M << " biomarkers\n";
}

namespace {

struct Classified {
  std::vector<int> labels;
  std::vector<std::vector<double>> posteriors;
  std::vector<bool> correct;
  std::vector<std::string> keys;  // subject_id,slot
};

std::vector<std::pair<Vector, int>> labeled_features(const Prediction& y, const MaskedBatch& batch) {
  std::vector<std::pair<Vector, int>> out;
  for (std::size_t j = 0; j < y.J; ++j) {
    for (std::size_t t = 0; t < y.T; ++t) {
      const auto label = batch.label(j, t + 1);
      if (!label) continue;
      std::vector<double> f(y.M);
      for (std::size_t m = 0; m < y.M; ++m) f[m] = y.at(j, t, m);
      out.emplace_back(Vector(std::move(f)), static_cast<int>(*label));
    }
  }
  return out;
}

struct MethodEval {
  Prediction test_prediction;
  MaeReport test_mae;
  LdaModel lda;
  Classified classified;
  AucReport auc;
};

MethodEval evaluate_method(const LstmParams& params, TrainMode mode, const MaskedBatch& train_raw,
                           const MaskedBatch& test_raw, const ScalingSpec& scaling, double shrinkage) {
  std::optional<ImputeStats> stats;
  if (mode != TrainMode::Robust) stats = imputation_stats(train_raw);
  MethodEval e;
  const Prediction train_prediction = predict(params, prepared(train_raw, mode, stats));
  e.test_prediction = predict(params, prepared(test_raw, mode, stats));
  e.test_mae = mae(e.test_prediction, test_raw, scaling);

  const auto train_samples = labeled_features(train_prediction, train_raw);
  std::vector<Vector> features;
  std::vector<int> labels;
  for (const auto& [f, l] : train_samples) {
    features.push_back(f);
    labels.push_back(l);
  }
  try {
    e.lda = lda_fit(features, labels, shrinkage);
  } catch (const StructuralError& err) {
    throw DataError(std::string("evaluate: cannot fit the classifier on training predictions: ") + err.what());
  }

  for (std::size_t j = 0; j < test_raw.J; ++j) {
    for (std::size_t t = 0; t < test_raw.T; ++t) {
      const auto label = test_raw.label(j, t + 1);
      if (!label) continue;
      std::vector<double> f(test_raw.M);
      for (std::size_t m = 0; m < test_raw.M; ++m) f[m] = e.test_prediction.at(j, t, m);
      const Vector feature(std::move(f));
      const int truth = static_cast<int>(*label);
      e.classified.labels.push_back(truth);
      e.classified.posteriors.push_back(lda_posteriors(e.lda, feature));
      e.classified.correct.push_back(lda_predict(e.lda, feature) == truth);
      e.classified.keys.push_back(test_raw.subject_ids[j] + "," + std::to_string(t + 1));
    }
  }
  try {
    e.auc = multiclass_auc(e.classified.posteriors, e.classified.labels, e.lda.classes);
  } catch (const StructuralError& err) {
    throw DataError(std::string("evaluate: test labels do not allow an AUC: ") + err.what());
  }
  return e;
}

std::optional<double> pair_auc(const AucReport& r, Label a, Label b) {
  for (const auto& p : r.pairwise) {
    if (p.first == static_cast<int>(a) && p.second == static_cast<int>(b)) return p.auc;
  }
  return std::nullopt;
}

}  // namespace

void run_evaluate(const EvaluateOptions& opt, std::ostream& log) {
  require(opt.model, "model");
  require(opt.train, "train");
  require(opt.test, "test");
  require(opt.scaling, "scaling");
  const ScalingSpec scaling = load_scaling(opt.scaling);
  const MaskedBatch train_raw = load_batch(opt.train, opt.grid);
  const MaskedBatch test_raw = load_batch(opt.test, opt.grid);
  check_scaling(scaling, train_raw, opt.train);
  check_scaling(scaling, test_raw, opt.test);

  const LstmParams params = load_model(opt.model);
  const LstmParams other = opt.compare_model.empty() ? params : load_model(opt.compare_model);
  const TrainMode other_mode = opt.compare_mode.value_or(opt.mode);

  const MethodEval a = evaluate_method(params, opt.mode, train_raw, test_raw, scaling, opt.shrinkage);
  const MethodEval b = evaluate_method(other, other_mode, train_raw, test_raw, scaling, opt.shrinkage);

  {
    auto out = open_out(opt.out_dir, "mae.csv");
    write_mae_csv(a.test_mae, out);
  }

  struct AucRow {
    const char* name;
    std::optional<double> value;
  };
  const std::vector<AucRow> auc_rows{
      {"CN-vs-MCI", pair_auc(a.auc, Label::CN, Label::MCI)},
      {"CN-vs-AD", pair_auc(a.auc, Label::CN, Label::AD)},
      {"MCI-vs-AD", pair_auc(a.auc, Label::MCI, Label::AD)},
      {"CN-vs-MCI-vs-AD", a.auc.multiclass},
  };
  {
    auto out = open_out(opt.out_dir, "auc.csv");
    out << "comparison,auc\n";
    for (const auto& r : auc_rows) out << r.name << ',' << (r.value ? fmt(*r.value) : "") << '\n';
  }
  {
    auto out = open_out(opt.out_dir, "posteriors.csv");
    out << "subject_id,slot,label";
    for (int c : a.lda.classes) out << ",p_" << label_code(static_cast<Label>(c));
    out << '\n';
    for (std::size_t i = 0; i < a.classified.labels.size(); ++i) {
      out << a.classified.keys[i] << ',' << label_code(static_cast<Label>(a.classified.labels[i]));
      for (double p : a.classified.posteriors[i]) out << ',' << fmt(p);
      out << '\n';
    }
  }

  auto out = open_out(opt.out_dir, "metrics.txt");
  out << "mode=" << to_string(opt.mode) << '\n' << "compare_mode=" << to_string(other_mode) << '\n';
  for (std::size_t m = 0; m < a.test_mae.names.size(); ++m) {
    out << "mae." << a.test_mae.names[m] << '=' << (a.test_mae.mae[m] ? fmt(*a.test_mae.mae[m]) : "") << '\n';
  }
  out << "mae.normalized_average="
      << (a.test_mae.normalized_average ? fmt(*a.test_mae.normalized_average) : "") << '\n';
  for (const auto& r : auc_rows) out << "auc." << r.name << '=' << (r.value ? fmt(*r.value) : "") << '\n';
  for (const std::string& w : a.auc.warnings) out << "warning=" << w << '\n';

  for (std::size_t m = 0; m < test_raw.M; ++m) {
    const auto ea = absolute_errors(a.test_prediction, test_raw, scaling, m);
    const auto eb = absolute_errors(b.test_prediction, test_raw, scaling, m);
    const WilcoxonResult w = wilcoxon_signed_rank(ea, eb);
    const std::string key = "wilcoxon." + test_raw.biomarker_names[m];
    out << key << ".statistic=" << fmt(w.statistic) << '\n'
        << key << ".n=" << w.n_effective << '\n'
        << key << ".p=" << fmt(w.p_value) << '\n';
  }
  const McNemarResult mc = mcnemar(a.classified.correct, b.classified.correct);
  const auto accuracy = [](const std::vector<bool>& c) {
    return c.empty() ? 0.0 : static_cast<double>(std::count(c.begin(), c.end(), true)) / static_cast<double>(c.size());
  };
  out << "accuracy=" << fmt(accuracy(a.classified.correct)) << '\n'
      << "compare_accuracy=" << fmt(accuracy(b.classified.correct)) << '\n'
      << "mcnemar.b01=" << mc.b01 << '\n'
      << "mcnemar.b10=" << mc.b10 << '\n'
      << "mcnemar.p=" << fmt(mc.p_value) << '\n';

  log << "evaluate: normalized MAE "
      << (a.test_mae.normalized_average ? fmt(*a.test_mae.normalized_average) : std::string("n/a"))
      << ", 3-class AUC " << fmt(a.auc.multiclass) << ", McNemar p " << fmt(mc.p_value) << '\n';
}

bool run_gradcheck(const GradCheckConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  const GradCheckReport r = grad_check(cfg);
  if (!out_dir.empty()) {
    auto out = open_out(out_dir, "gradcheck.csv");
    out << "array,max_rel_error,max_abs_error\n";
    for (const auto& e : r.entries) out << e.name << ',' << fmt(e.max_rel_error) << ',' << fmt(e.max_abs_error) << '\n';
  }
  for (const auto& e : r.entries) {
    log << e.name << " max_rel=" << fmt(e.max_rel_error) << " max_abs=" << fmt(e.max_abs_error) << '\n';
  }
  log << "gradcheck: " << (r.pass ? "PASS" : "FAIL") << " max relative error " << fmt(r.max_rel_error) << " ("
      << r.worst << "), tolerance " << fmt(cfg.tolerance) << '\n';
  return r.pass;
}

void run_sweep(const SweepOptions& opt, std::ostream& log) {
  require(opt.train, "train");
  require(opt.test, "test");
  require(opt.scaling, "scaling");
  opt.config.validate();
  const ScalingSpec scaling = load_scaling(opt.scaling);
  const MaskedBatch train_raw = load_batch(opt.train, opt.grid);
  const MaskedBatch test_raw = load_batch(opt.test, opt.grid);
  check_scaling(scaling, train_raw, opt.train);
  check_scaling(scaling, test_raw, opt.test);
  const SweepResult result = sweep_missing(train_raw, test_raw, scaling, opt.rates, opt.config, opt.config.seed);
  auto out = open_out(opt.out_dir, "sweep.csv");
  write_sweep_csv(result, out);
  for (const std::string& line : result.log) log << line << '\n';
  log << "sweep: " << result.rows.size() << " rows\n";
}

void run_generate(const GenerateOptions& opt, std::ostream& log) {
  opt.config.validate();
  const CohortTable table = generate(opt.config);
  auto out = open_out(opt.out_dir, "cohort.csv");
  write_csv(table, out);
  log << "generate: " << table.subject_count() << " subjects, " << table.records.size() << " visits\n";
}

}  // namespace mlstm::cli
