#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "mlstm/data.hpp"
#include "mlstm/math.hpp"

namespace mlstm {

// Single-layer peephole LSTM, N inputs and M hidden units (output = hidden).
// W_* are M x N, U_* are M x M, V_* and b_* have length M. The "c" weights
// drive the cell input modulation z.
struct LstmParams {
  std::size_t N = 0;
  std::size_t M = 0;
  Matrix W_f, W_i, W_c, W_o;
  Matrix U_f, U_i, U_c, U_o;
  Vector V_f, V_i, V_o;
  Vector b_f, b_i, b_c, b_o;

  // All-zero parameters of the given shape.
  static LstmParams zeros(std::size_t N, std::size_t M);

  enum class Kind { Input, Recurrent, Peephole, Bias };
  struct ArrayRef {
    std::string_view name;
    Kind kind;
    std::size_t rows;
    std::size_t cols;
    std::span<double> values;
  };
  struct ConstArrayRef {
    std::string_view name;
    Kind kind;
    std::size_t rows;
    std::size_t cols;
    std::span<const double> values;
  };

  // Every array in file order: W_f W_i W_c W_o U_f U_i U_c U_o V_f V_i V_o
  // b_f b_i b_c b_o. Vectors report rows = 1.
  std::vector<ArrayRef> arrays();
  std::vector<ConstArrayRef> arrays() const;

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

LstmParams init_params(Rng& rng, std::size_t N, std::size_t M, double lo = -0.05, double hi = 0.05);

// Pre-activations (f, i, z, o), gate outputs (fg, ig, zg, og), cell state c,
// squashed cell ct = tanh(c) and hidden output h for one step.
struct StepState {
  Vector f, i, z, o;
  Vector fg, ig, zg, og;
  Vector c, ct, h;
};

// x must already have missing entries zeroed. Throws NumericError naming the
// gate if any intermediate value is not finite.
StepState forward_step(const LstmParams& p, const Vector& x, const Vector& h_prev, const Vector& c_prev);

// Per (subject, step) cache of everything backpropagation needs, stored as
// flat J x T x M arrays.
struct ForwardCache {
  std::size_t J = 0, T = 0, M = 0;
  std::vector<double> f, i, z, o, fg, ig, zg, og, c, ct, h;

  std::size_t at(std::size_t j, std::size_t t) const { return (j * T + t) * M; }
  std::span<const double> view(const std::vector<double>& field, std::size_t j, std::size_t t) const {
    return {field.data() + at(j, t), M};
  }
};

struct Prediction {
  std::size_t J = 0, T = 0, M = 0;
  std::vector<double> y;  // J x T x M, y == h

  double at(std::size_t j, std::size_t t, std::size_t m) const { return y[(j * T + t) * M + m]; }
};

struct ForwardResult {
  Prediction prediction;
  ForwardCache cache;
};

// Runs every subject from h = c = 0 over T steps.
ForwardResult forward_sequence(const LstmParams& p, const MaskedBatch& batch);
Prediction predict(const LstmParams& p, const MaskedBatch& batch);

// Text model format, version 1:
//   MLSTM 1 <N> <M>
//   W_f
//   <row values separated by spaces, one matrix row per line>
//   ...
// Vectors occupy a single line. Values use shortest round-trip formatting.
void write_model(const LstmParams& p, std::ostream& out);
LstmParams read_model(std::istream& in);
void save_model(const LstmParams& p, const std::filesystem::path& path);
LstmParams load_model(const std::filesystem::path& path);

}  // namespace mlstm
