#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlstm/data.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/training.hpp"

namespace mlstm {

struct MaeReport {
  std::vector<std::string> names;
  std::vector<std::optional<double>> mae;  // nullopt when a biomarker has no observed target
  std::vector<std::size_t> count;
  // Mean over reported biomarkers of mae / (max - min) of the scaling range.
  std::optional<double> normalized_average;
};

// Predictions and targets are mapped back to original units before
// differencing; only observed target cells count.
MaeReport mae(const Prediction& y, const MaskedBatch& truth, const ScalingSpec& scaling);

// Absolute errors (original units) of one biomarker over observed target
// cells, in (subject, step) order. Paired across models on the same batch.
std::vector<double> absolute_errors(const Prediction& y, const MaskedBatch& truth, const ScalingSpec& scaling,
                                    std::size_t biomarker);

// biomarker,mae,count
void write_mae_csv(const MaeReport& report, std::ostream& out);

// Gaussian classes with a shared pooled covariance, shrunk toward its
// diagonal: S <- (1 - lambda) S + lambda diag(S).
struct LdaModel {
  std::vector<int> classes;
  std::vector<Vector> means;
  Matrix covariance;
  Matrix cholesky_factor;
  std::vector<double> priors;
  double shrinkage = 0.01;
};

LdaModel lda_fit(std::span<const Vector> features, std::span<const int> labels, double shrinkage = 0.01);
// Posterior probability per class, in model.classes order.
std::vector<double> lda_posteriors(const LdaModel& model, const Vector& feature);
int lda_predict(const LdaModel& model, const Vector& feature);

struct AucReport {
  struct Pair {
    int first = 0;
    int second = 0;
    double auc = 0.0;
  };
  std::vector<int> classes;  // classes that had samples
  std::vector<Pair> pairwise;
  double multiclass = 0.0;
  std::vector<std::string> warnings;
};

// Multi-class AUC from class posteriors. posteriors[i][c] scores sample i for
// classes[c]. For each class pair (i, k) the rank sum SR_i of p(c_i|.) over
// the pooled samples of both classes (mid-ranks for ties, ascending) gives
//   A(i|k) = (SR_i - n_i (n_i + 1) / 2) / (n_i n_k)
// and AUC = sum_{i<k} (A(i|k) + A(k|i)) / (n_c (n_c - 1)). Pairwise entries are
// the same formula restricted to the two classes.
AucReport multiclass_auc(std::span<const std::vector<double>> posteriors, std::span<const int> labels,
                         std::span<const int> classes);

struct RemovalResult {
  MaskedBatch batch;
  std::vector<std::size_t> removed;   // per biomarker
  std::vector<std::size_t> exempted;  // cells skipped to keep the input floor
};

// Removes floor(rate * observed) cells per biomarker from the grid slots of a
// batch, visiting cells in a seeded random order. A cell is exempt when its
// removal would leave the subject's input node with fewer than min_inputs
// observed steps. The order does not depend on rate, so removals are nested.
RemovalResult remove_observed(const MaskedBatch& batch, double rate, std::uint64_t seed,
                              std::size_t min_inputs = 2);

struct MethodRun {
  TrainResult training;
  Prediction test_prediction;
  MaeReport test_mae;
};

// Imputation statistics come from train only; inputs of test are prepared the
// same way and MAE is measured against test's original targets.
MethodRun run_method(const MaskedBatch& train, const MaskedBatch& test, const ScalingSpec& scaling,
                     const TrainConfig& cfg);

struct SweepRow {
  double rate = 0.0;
  TrainMode method = TrainMode::Robust;
  double norm_mae = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> log;
};

// For every rate and method: remove training cells, train, report the
// normalized-average test MAE. Every cell trains from cfg.seed; removal uses a
// seed derived from `seed`.
SweepResult sweep_missing(const MaskedBatch& train, const MaskedBatch& test, const ScalingSpec& scaling,
                          std::span<const double> rates, const TrainConfig& cfg, std::uint64_t seed,
                          std::span<const TrainMode> methods = {});

// rate,method,norm_mae
void write_sweep_csv(const SweepResult& result, std::ostream& out);

}  // namespace mlstm
