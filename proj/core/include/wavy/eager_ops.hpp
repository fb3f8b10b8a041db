#pragma once

#include <cstddef>
#include <span>

#include "wavy/norms_ffn.hpp"
#include "wavy/numerics.hpp"

namespace wavy {

/// Flow backend that evaluates immediately on matrices.
struct EagerOps {
  using Value = Matrix;

  const Matrix& param(const Matrix& m) const noexcept { return m; }
  const Matrix& constant(const Matrix& m) const noexcept { return m; }
  Matrix zeros(std::size_t rows, std::size_t cols) const { return Matrix(rows, cols); }
  std::size_t rows(const Matrix& m) const noexcept { return m.rows(); }

  Matrix add(const Matrix& a, const Matrix& b) const { return a + b; }
  Matrix sub(const Matrix& a, const Matrix& b) const { return a - b; }
  Matrix scale(const Matrix& a, double s) const { return s * a; }
  Matrix affine(const Matrix& a, double s, double c) const { return wavy::affine(a, s, c); }
  Matrix hadamard(const Matrix& a, const Matrix& b) const { return wavy::hadamard(a, b); }
  Matrix matmul(const Matrix& a, const Matrix& b) const { return wavy::matmul(a, b); }
  Matrix matmul_nt(const Matrix& a, const Matrix& b) const { return wavy::matmul_nt(a, b); }
  Matrix add_row(const Matrix& a, const Matrix& row) const { return wavy::add_row(a, row); }
  Matrix mul_row(const Matrix& a, const Matrix& row) const { return wavy::mul_row(a, row); }
  Matrix sigmoid(const Matrix& a) const { return wavy::sigmoid(a); }
  Matrix row_softmax(const Matrix& a) const { return wavy::row_softmax(a); }
  Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) const {
    return wavy::layer_norm(x, gamma, beta, eps);
  }
  Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const Matrix& gamma, double eps) const {
    return wavy::layer_norm_velocity(x, y, gamma, eps);
  }
  Matrix activation(const Matrix& z, Activation kind) const { return wavy::activation(z, kind); }
  Matrix activation_derivative(const Matrix& z, Activation kind) const {
    return wavy::activation_derivative(z, kind);
  }
  Matrix slice_rows(const Matrix& m, std::size_t first, std::size_t count) const {
    return wavy::slice_rows(m, first, count);
  }
  Matrix concat_rows(std::span<const Matrix> parts) const { return wavy::concat_rows(parts); }
  Matrix concat_cols(std::span<const Matrix> parts) const { return wavy::concat_cols(parts); }
  Matrix gather_rows(const Matrix& table, std::span<const int> idx) const {
    return wavy::gather_rows(table, idx);
  }
};

}  // namespace wavy
