#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "wavy/error.hpp"

namespace wavy {

// Dense row-major matrix of doubles. Vectors (LN scales, biases, gates) are
// stored as 1xN matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_same_shape(const Matrix& a, const Matrix& b, const char* what);
void require_finite(const Matrix& m, const char* what);
bool all_finite(const Matrix& m) noexcept;

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);
Matrix& operator+=(Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
/// s * m + c, elementwise.
Matrix affine(const Matrix& m, double s, double c);

/// Adds a 1xC row to every row of m.
Matrix add_row(const Matrix& m, const Matrix& row);
/// Multiplies every row of m elementwise by a 1xC row; a 1x1 row broadcasts.
Matrix mul_row(const Matrix& m, const Matrix& row);

Matrix sigmoid(const Matrix& m);

/// Row-wise softmax with per-row max subtraction.
Matrix row_softmax(const Matrix& m);

Matrix slice_rows(const Matrix& m, std::size_t first, std::size_t count);
Matrix slice_cols(const Matrix& m, std::size_t first, std::size_t count);
Matrix concat_rows(std::span<const Matrix> parts);
Matrix concat_cols(std::span<const Matrix> parts);
Matrix gather_rows(const Matrix& table, std::span<const int> indices);

Matrix column_means(const Matrix& m);
double max_abs(const Matrix& m) noexcept;
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m) noexcept;
double sum(const Matrix& m) noexcept;

/// (f(x + eps*y) - f(x - eps*y)) / (2 eps).
Matrix central_jvp(const std::function<Matrix(const Matrix&)>& f, const Matrix& x,
                   const Matrix& y, double eps);

// splitmix64-seeded xoshiro256**. Streams are identical across platforms;
// normal() uses Box-Muller on top of uniform() so it does not depend on the
// standard library's distribution implementations.
class Prng {
 public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double normal() noexcept;
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;
  /// Independent generator seeded from this stream.
  Prng split() noexcept;

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

Matrix gaussian_init(Prng& prng, std::size_t rows, std::size_t cols, double std_dev);

}  // namespace wavy
