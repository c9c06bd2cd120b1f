#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace mlstm {

// Dense vector of doubles.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Vector matvec(const Matrix& m, const Vector& v);
Vector add(const Vector& a, const Vector& b);

// Span kernels used on the hot paths; sizes are the caller's responsibility.
// out += m * v
void matvec_acc(const Matrix& m, std::span<const double> v, std::span<double> out);
// out += m^T * v
void matvec_t_acc(const Matrix& m, std::span<const double> v, std::span<double> out);
// m += scale * a b^T
void outer_acc(std::span<const double> a, std::span<const double> b, Matrix& m, double scale = 1.0);

double sigmoid(double x);
double sigmoid_deriv(double pre);
double tanh_deriv(double pre);

Vector sigmoid(const Vector& x);
Vector sigmoid_deriv(const Vector& pre);
Vector tanh_act(const Vector& x);
Vector tanh_deriv(const Vector& pre);

bool all_finite(std::span<const double> values);

// xoshiro256** seeded through splitmix64. The integer stream is fixed for a
// given seed on every platform; uniform() takes the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // Box-Muller, one value per call.
  double normal(double mean = 0.0, double sd = 1.0);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

// Mixes a base seed with a stream tag (splitmix64 finalizer); used to derive
// independent substreams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

Matrix uniform_init(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Throws NumericError if a pivot is not strictly positive.
Matrix cholesky(const Matrix& a);
// Solves (L L^T) x = b given the Cholesky factor L.
Vector cholesky_solve(const Matrix& l, const Vector& b);

}  // namespace mlstm
