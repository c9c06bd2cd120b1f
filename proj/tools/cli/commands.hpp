#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mlstm/synthgen.hpp"
#include "mlstm/training.hpp"

namespace mlstm::cli {

namespace fs = std::filesystem;

struct GridOptions {
  int interval = 12;
  int horizon = 120;

  // Prediction steps T; the grid has T + 1 slots. Throws StructuralError
  // unless horizon is a positive multiple of interval.
  std::size_t steps() const;
};

struct PreprocessOptions {
  fs::path input;
  fs::path out_dir = ".";
  bool icv = false;
  double outlier_z = 3.0;
  std::size_t min_visits = 3;
  GridOptions grid;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  fs::path train;
  fs::path val;  // optional
  fs::path scaling;
  fs::path out_dir = ".";
  GridOptions grid;
  TrainConfig config;
};

struct PredictOptions {
  fs::path model;
  fs::path input;
  fs::path scaling;
  fs::path train;  // imputation statistics, required for the imputation modes
  fs::path out_dir = ".";
  TrainMode mode = TrainMode::Robust;
  GridOptions grid;
};

struct EvaluateOptions {
  fs::path model;
  fs::path train;
  fs::path test;
  fs::path scaling;
  fs::path compare_model;  // defaults to model
  fs::path out_dir = ".";
  TrainMode mode = TrainMode::Robust;
  std::optional<TrainMode> compare_mode;  // defaults to mode
  GridOptions grid;
  double shrinkage = 0.01;
};

struct SweepOptions {
  fs::path train;
  fs::path test;
  fs::path scaling;
  fs::path out_dir = ".";
  GridOptions grid;
  TrainConfig config;
  std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
};

struct GenerateOptions {
  SynthConfig config;
  fs::path out_dir = ".";
};

// Each command writes its artifacts under out_dir and a short summary to log.
void run_preprocess(const PreprocessOptions& opt, std::ostream& log);
void run_train(const TrainOptions& opt, std::ostream& log);
void run_predict(const PredictOptions& opt, std::ostream& log);
void run_evaluate(const EvaluateOptions& opt, std::ostream& log);
// Returns true when every array is within tolerance. With a non-empty out_dir
// the per-array errors are also written to gradcheck.csv.
bool run_gradcheck(const GradCheckConfig& cfg, const fs::path& out_dir, std::ostream& log);
void run_sweep(const SweepOptions& opt, std::ostream& log);
void run_generate(const GenerateOptions& opt, std::ostream& log);

}  // namespace mlstm::cli
