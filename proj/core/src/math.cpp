#include "mlstm/math.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mlstm/error.hpp"

namespace mlstm {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw StructuralError("Matrix: data length " + std::to_string(data_.size()) +
                          " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    throw StructuralError("matvec: matrix has " + std::to_string(m.cols()) +
                          " columns but vector has length " + std::to_string(v.size()));
  }
  Vector out(m.rows());
  matvec_acc(m, v.span(), out.span());
  return out;
}

Vector add(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw StructuralError("add: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

void matvec_acc(const Matrix& m, std::span<const double> v, std::span<double> out) {
  const std::size_t cols = m.cols();
  const double* data = m.span().data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = data + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * v[c];
    out[r] += acc;
  }
}

void matvec_t_acc(const Matrix& m, std::span<const double> v, std::span<double> out) {
  const std::size_t cols = m.cols();
  const double* data = m.span().data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = data + r * cols;
    const double vr = v[r];
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * vr;
  }
}

void outer_acc(std::span<const double> a, std::span<const double> b, Matrix& m, double scale) {
  const std::size_t cols = m.cols();
  double* data = m.span().data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double ar = a[r] * scale;
    double* row = data + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += ar * b[c];
  }
}

double sigmoid(double x) {
  // Branch on sign so exp() never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_deriv(double pre) {
  const double s = sigmoid(pre);
  return s * (1.0 - s);
}

double tanh_deriv(double pre) {
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

namespace {
template <typename F>
Vector map(const Vector& x, F f) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}
}  // namespace

Vector sigmoid(const Vector& x) { return map(x, [](double v) { return sigmoid(v); }); }
Vector sigmoid_deriv(const Vector& pre) { return map(pre, [](double v) { return sigmoid_deriv(v); }); }
Vector tanh_act(const Vector& x) { return map(x, [](double v) { return std::tanh(v); }); }
Vector tanh_deriv(const Vector& pre) { return map(pre, [](double v) { return tanh_deriv(v); }); }

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {
std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
  return std::min(hi, lo + (hi - lo) * uniform());
}

double Rng::normal(double mean, double sd) {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + sd * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw StructuralError("Rng::below: n must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t v = next();
  while (v >= limit) v = next();
  return v % n;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t state = base ^ (tag * 0xd1b54a32d192ed03ULL);
  splitmix64(state);
  return splitmix64(state);
}

Matrix uniform_init(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  if (!(lo < hi)) {
    throw StructuralError("uniform_init: need lo < hi, got [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
  Matrix m(rows, cols);
  for (double& v : m.span()) v = rng.uniform(lo, hi);
  return m;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw StructuralError("cholesky: matrix not square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericError("cholesky: matrix not positive definite (pivot " + std::to_string(j) +
                         ")");
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

Vector cholesky_solve(const Matrix& l, const Vector& b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw StructuralError("cholesky_solve: length mismatch");
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

}  // namespace mlstm
