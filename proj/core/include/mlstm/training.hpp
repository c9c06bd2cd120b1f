#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlstm/data.hpp"
#include "mlstm/lstm.hpp"

namespace mlstm {

enum class TrainMode { Robust, MeanImpute, ForwardImpute };

std::string_view to_string(TrainMode mode);
// Accepts "robust", "mean-impute", "forward-impute".
std::optional<TrainMode> parse_train_mode(std::string_view text);

// Availability-based normalization factors of one batch:
//   beta_x[j]   = |x_j| / (T N)       observed input cells of subject j
//   beta_m[j,m] = |y_j(m)| / T        observed target steps of output node m
//   beta_n[j,n] = |x_j(n)| / T        observed input steps of input node n
// A count of zero yields the sentinel 1.0; such a node contributes nothing
// because its masked values are zero.
struct NormFactors {
  std::size_t J = 0, N = 0, M = 0;
  std::vector<double> beta_x;
  std::vector<double> beta_m;
  std::vector<double> beta_n;

  static NormFactors ones(std::size_t J, std::size_t N, std::size_t M);
  double bx(std::size_t j) const { return beta_x[j]; }
  double bm(std::size_t j, std::size_t m) const { return beta_m[j * M + m]; }
  double bn(std::size_t j, std::size_t n) const { return beta_n[j * N + n]; }
};

NormFactors compute_norm_factors(const MaskedBatch& batch);

struct LossResult {
  double loss = 0.0;                // sum over output nodes of L(m)
  std::vector<double> dy;           // J x T x M, zero where the target is missing
  std::vector<double> per_subject;  // contribution of each subject to loss
};

// L(m) = 1/(2JT) sum_{j,t observed} (y - s)^2 / (beta_x beta_m)
// dy   = 1/(JT)  (y - s) / (beta_x beta_m), or 0 for a missing target.
LossResult loss_and_output_grad(const Prediction& y, const MaskedBatch& batch, const NormFactors& nf);

struct Gradients {
  LstmParams d;            // same layout as the parameters
  std::vector<double> dx;  // J x T x N, filled only when requested
};

struct BackwardOptions {
  bool compute_dx = false;
  // Debug hook: perturbs dV_o after the pass so the checker can be shown to fail.
  bool corrupt_vo = false;
};

// Backpropagation through time with missing-value normalization: input weight
// columns n are accumulated per subject with weight 1/beta_n[j,n]. All other
// gradients are exact derivatives of the scalar loss.
Gradients backward(const LstmParams& p, const ForwardCache& cache, std::span<const double> dy,
                   const MaskedBatch& batch, const NormFactors& nf, const BackwardOptions& options = {});

struct OptimizerConfig {
  double learning_rate = 0.1;  // alpha
  double momentum = 0.9;       // mu
  double weight_decay = 1e-4;  // gamma
  bool decay_biases = false;
  bool decay_peepholes = true;
};

struct OptState {
  OptimizerConfig config;
  LstmParams velocity;  // zero-initialized update buffers

  OptState(const OptimizerConfig& cfg, std::size_t N, std::size_t M)
      : config(cfg), velocity(LstmParams::zeros(N, M)) {}
};

// v <- mu v - alpha (g + gamma w);  w <- w + v
void optimizer_step(LstmParams& params, const Gradients& grads, OptState& state);

// Per-biomarker statistics over the observed grid slots of a training batch.
struct ImputeStats {
  std::vector<double> mean;
  std::vector<double> median;
};

ImputeStats imputation_stats(const MaskedBatch& train);
// Every missing input and target cell takes the training mean; masks become all-true.
MaskedBatch impute_mean(const MaskedBatch& batch, const ImputeStats& stats);
// Last observation carried forward along the grid; a leading gap takes the
// training median. Masks become all-true.
MaskedBatch impute_forward(const MaskedBatch& batch, const ImputeStats& stats);
// Robust mode returns the batch unchanged.
MaskedBatch prepare_batch(const MaskedBatch& batch, TrainMode mode, const ImputeStats& stats);

struct TrainConfig {
  std::size_t epochs = 1000;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Robust;
  double init_lo = -0.05;
  double init_hi = 0.05;
  // Stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 0;

  // Throws StructuralError naming the offending field.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::vector<double> val_mae;  // original units, per biomarker
};

struct TrainResult {
  LstmParams params;
  std::vector<EpochRecord> history;
  bool stopped_early = false;
};

struct Validation {
  const MaskedBatch& inputs;   // already prepared for the training mode
  const MaskedBatch& targets;  // original, un-imputed targets
  const ScalingSpec& scaling;
};

// Full-batch training: forward, loss, backward, momentum step per epoch. The
// batch must already be prepared for cfg.mode; imputation modes use beta = 1.
TrainResult train(const MaskedBatch& batch, const TrainConfig& cfg,
                  const std::optional<Validation>& validation = std::nullopt);

// epoch,train_loss[,val_mae_<biomarker>...]
void write_history_csv(const std::vector<EpochRecord>& history, std::span<const std::string> biomarkers,
                       std::ostream& out);

struct GradCheckConfig {
  std::size_t N = 3, M = 3, T = 4, J = 2;
  double missing_x = 0.4;
  double missing_s = 0.4;
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  bool corrupt_vo = false;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
  bool pass = false;
};

// Random masked batch with values in [-1, 1]; each input and target cell is
// dropped independently with the given probabilities.
MaskedBatch random_masked_batch(Rng& rng, std::size_t J, std::size_t T, std::size_t N, std::size_t M,
                                double missing_x, double missing_s);

// Compares backward() against central differences of the per-subject losses.
// Input-weight columns are compared with the same 1/beta_n weighting applied
// per subject; every other array against the plain loss derivative.
GradCheckReport grad_check(const LstmParams& p, const MaskedBatch& batch, double epsilon, double tolerance,
                           bool corrupt_vo = false);
GradCheckReport grad_check(const GradCheckConfig& cfg);

}  // namespace mlstm
