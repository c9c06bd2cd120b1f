#include "mlstm/lstm.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "mlstm/error.hpp"

namespace mlstm {

LstmParams LstmParams::zeros(std::size_t N, std::size_t M) {
  LstmParams p;
  p.N = N;
  p.M = M;
  for (Matrix* w : {&p.W_f, &p.W_i, &p.W_c, &p.W_o}) *w = Matrix(M, N);
  for (Matrix* u : {&p.U_f, &p.U_i, &p.U_c, &p.U_o}) *u = Matrix(M, M);
  for (Vector* v : {&p.V_f, &p.V_i, &p.V_o, &p.b_f, &p.b_i, &p.b_c, &p.b_o}) *v = Vector(M);
  return p;
}

namespace {

template <typename Params, typename Ref>
std::vector<Ref> collect_arrays(Params& p) {
  using K = LstmParams::Kind;
  auto mat = [](std::string_view name, K kind, auto& m) {
    return Ref{name, kind, m.rows(), m.cols(), m.span()};
  };
  auto vec = [](std::string_view name, K kind, auto& v) { return Ref{name, kind, 1, v.size(), v.span()}; };
  return {mat("W_f", K::Input, p.W_f),     mat("W_i", K::Input, p.W_i),
          mat("W_c", K::Input, p.W_c),     mat("W_o", K::Input, p.W_o),
          mat("U_f", K::Recurrent, p.U_f), mat("U_i", K::Recurrent, p.U_i),
          mat("U_c", K::Recurrent, p.U_c), mat("U_o", K::Recurrent, p.U_o),
          vec("V_f", K::Peephole, p.V_f),  vec("V_i", K::Peephole, p.V_i),
          vec("V_o", K::Peephole, p.V_o),  vec("b_f", K::Bias, p.b_f),
          vec("b_i", K::Bias, p.b_i),      vec("b_c", K::Bias, p.b_c),
          vec("b_o", K::Bias, p.b_o)};
}

}  // namespace

std::vector<LstmParams::ArrayRef> LstmParams::arrays() { return collect_arrays<LstmParams, ArrayRef>(*this); }

std::vector<LstmParams::ConstArrayRef> LstmParams::arrays() const {
  return collect_arrays<const LstmParams, ConstArrayRef>(*this);
}

LstmParams init_params(Rng& rng, std::size_t N, std::size_t M, double lo, double hi) {
  if (!(lo < hi)) throw StructuralError("init_params: need lo < hi");
  LstmParams p = LstmParams::zeros(N, M);
  for (auto& a : p.arrays()) {
    for (double& v : a.values) v = rng.uniform(lo, hi);
  }
  return p;
}

namespace {

struct StepSpans {
  std::span<double> f, i, z, o, fg, ig, zg, og, c, ct, h;
};

void check_finite(std::span<const double> v, const char* gate) {
  if (!all_finite(v)) throw NumericError(std::string("forward: non-finite value in ") + gate);
}

// The peephole terms of the forget and input gates read the previous cell
// state; the output gate reads the freshly updated one.
void step_kernel(const LstmParams& p, std::span<const double> x, std::span<const double> h_prev,
                 std::span<const double> c_prev, const StepSpans& out) {
  const std::size_t M = p.M;
  for (std::size_t m = 0; m < M; ++m) {
    out.f[m] = p.b_f[m] + p.V_f[m] * c_prev[m];
    out.i[m] = p.b_i[m] + p.V_i[m] * c_prev[m];
    out.z[m] = p.b_c[m];
    out.o[m] = p.b_o[m];
  }
  matvec_acc(p.W_f, x, out.f);
  matvec_acc(p.U_f, h_prev, out.f);
  matvec_acc(p.W_i, x, out.i);
  matvec_acc(p.U_i, h_prev, out.i);
  matvec_acc(p.W_c, x, out.z);
  matvec_acc(p.U_c, h_prev, out.z);
  matvec_acc(p.W_o, x, out.o);
  matvec_acc(p.U_o, h_prev, out.o);
  check_finite(out.f, "forget gate");
  check_finite(out.i, "input gate");
  check_finite(out.z, "cell input");
  for (std::size_t m = 0; m < M; ++m) {
    out.fg[m] = sigmoid(out.f[m]);
    out.ig[m] = sigmoid(out.i[m]);
    out.zg[m] = std::tanh(out.z[m]);
    out.c[m] = out.fg[m] * c_prev[m] + out.ig[m] * out.zg[m];
    out.ct[m] = std::tanh(out.c[m]);
    out.o[m] += p.V_o[m] * out.c[m];
  }
  check_finite(out.c, "cell state");
  check_finite(out.o, "output gate");
  for (std::size_t m = 0; m < M; ++m) {
    out.og[m] = sigmoid(out.o[m]);
    out.h[m] = out.og[m] * out.ct[m];
  }
}

void check_dims(const LstmParams& p, std::size_t n_in, std::size_t n_h, std::size_t n_c) {
  if (n_in != p.N || n_h != p.M || n_c != p.M) {
    throw StructuralError("forward_step: expected x of length " + std::to_string(p.N) +
                          " and state of length " + std::to_string(p.M));
  }
}

}  // namespace

StepState forward_step(const LstmParams& p, const Vector& x, const Vector& h_prev, const Vector& c_prev) {
  check_dims(p, x.size(), h_prev.size(), c_prev.size());
  StepState s;
  for (Vector* v : {&s.f, &s.i, &s.z, &s.o, &s.fg, &s.ig, &s.zg, &s.og, &s.c, &s.ct, &s.h}) *v = Vector(p.M);
  step_kernel(p, x.span(), h_prev.span(), c_prev.span(),
              {s.f.span(), s.i.span(), s.z.span(), s.o.span(), s.fg.span(), s.ig.span(), s.zg.span(),
               s.og.span(), s.c.span(), s.ct.span(), s.h.span()});
  return s;
}

ForwardResult forward_sequence(const LstmParams& p, const MaskedBatch& batch) {
  if (batch.N != p.N || batch.M != p.M) {
    throw StructuralError("forward_sequence: batch is " + std::to_string(batch.N) + "->" +
                          std::to_string(batch.M) + " but model is " + std::to_string(p.N) + "->" +
                          std::to_string(p.M));
  }
  ForwardResult r;
  ForwardCache& k = r.cache;
  k.J = batch.J;
  k.T = batch.T;
  k.M = p.M;
  const std::size_t total = k.J * k.T * k.M;
  for (auto* field : {&k.f, &k.i, &k.z, &k.o, &k.fg, &k.ig, &k.zg, &k.og, &k.c, &k.ct, &k.h}) {
    field->assign(total, 0.0);
  }
  const std::vector<double> zero(p.M, 0.0);
  for (std::size_t j = 0; j < k.J; ++j) {
    for (std::size_t t = 0; t < k.T; ++t) {
      const std::size_t at = k.at(j, t);
      auto slice = [&](std::vector<double>& v) { return std::span<double>(v.data() + at, p.M); };
      std::span<const double> h_prev = t == 0 ? std::span<const double>(zero) : k.view(k.h, j, t - 1);
      std::span<const double> c_prev = t == 0 ? std::span<const double>(zero) : k.view(k.c, j, t - 1);
      step_kernel(p, batch.x_step(j, t), h_prev, c_prev,
                  {slice(k.f), slice(k.i), slice(k.z), slice(k.o), slice(k.fg), slice(k.ig), slice(k.zg),
                   slice(k.og), slice(k.c), slice(k.ct), slice(k.h)});
    }
  }
  r.prediction = {k.J, k.T, k.M, k.h};
  return r;
}

Prediction predict(const LstmParams& p, const MaskedBatch& batch) {
  return forward_sequence(p, batch).prediction;
}

void write_model(const LstmParams& p, std::ostream& out) {
  out << "MLSTM 1 " << p.N << ' ' << p.M << '\n';
  for (const auto& a : p.arrays()) {
    out << a.name << '\n';
    for (std::size_t r = 0; r < a.rows; ++r) {
      for (std::size_t c = 0; c < a.cols; ++c) {
        if (c) out << ' ';
        out << format_double(a.values[r * a.cols + c]);
      }
      out << '\n';
    }
  }
}

LstmParams read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("model: empty file, missing header");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  long long n = -1, m = -1;
  header >> magic >> version >> n >> m;
  if (magic != "MLSTM") throw FormatError("model: bad magic, expected 'MLSTM'");
  if (version != 1) throw FormatError("model: unsupported version " + std::to_string(version));
  if (n <= 0 || m <= 0) throw FormatError("model: bad dimensions in header");
  LstmParams p = LstmParams::zeros(static_cast<std::size_t>(n), static_cast<std::size_t>(m));
  for (auto& a : p.arrays()) {
    const std::string name(a.name);
    if (!std::getline(in, line)) throw FormatError("model: missing section " + name);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != name) throw FormatError("model: expected section " + name + ", found '" + line + "'");
    for (std::size_t r = 0; r < a.rows; ++r) {
      if (!std::getline(in, line)) {
        throw FormatError("model: section " + name + " truncated at row " + std::to_string(r));
      }
      std::istringstream row(line);
      std::string tok;
      std::size_t c = 0;
      while (row >> tok) {
        if (c >= a.cols) throw FormatError("model: section " + name + " row " + std::to_string(r) + " too long");
        auto v = parse_double(tok);
        if (!v) throw FormatError("model: bad value '" + tok + "' in section " + name);
        a.values[r * a.cols + c++] = *v;
      }
      if (c != a.cols) {
        throw FormatError("model: section " + name + " row " + std::to_string(r) + " has " + std::to_string(c) +
                          " values, expected " + std::to_string(a.cols));
      }
    }
  }
  return p;
}

void save_model(const LstmParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write model " + path.string());
  write_model(p, out);
}

LstmParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model " + path.string());
  return read_model(in);
}

}  // namespace mlstm
