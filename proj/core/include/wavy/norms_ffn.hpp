#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wavy/numerics.hpp"

namespace wavy {

enum class Activation { kRelu, kGelu };

double activation(double z, Activation kind) noexcept;
/// relu'(0) is taken as 0.
double activation_derivative(double z, Activation kind) noexcept;
/// Needed to differentiate through the velocity FFN.
double activation_second_derivative(double z, Activation kind) noexcept;

Matrix activation(const Matrix& z, Activation kind);
Matrix activation_derivative(const Matrix& z, Activation kind);

struct LayerNormParams {
  Matrix gamma;  // 1 x d
  Matrix beta;   // 1 x d
  double eps = 1e-5;

  static LayerNormParams identity(std::size_t d, double eps = 1e-5);
  std::size_t dim() const noexcept { return gamma.cols(); }
};

struct RowStats {
  double mean;
  double variance;  // biased, divisor d
};

RowStats row_stats(std::span<const double> x) noexcept;

std::vector<double> layer_norm(std::span<const double> x_row, const LayerNormParams& p);
/// y / sqrt(var(x) + eps) * gamma; the statistics come from the state row x.
std::vector<double> layer_norm_velocity(std::span<const double> x_row, std::span<const double> y_row,
                                        const LayerNormParams& p);

Matrix layer_norm(const Matrix& x, const LayerNormParams& p);
Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const LayerNormParams& p);
Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps);
Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const Matrix& gamma, double eps);

struct FfnParams {
  Matrix w1;  // d x d_ff
  Matrix b1;  // 1 x d_ff
  Matrix w2;  // d_ff x d
  Matrix b2;  // 1 x d
  Activation activation = Activation::kGelu;

  std::size_t model_dim() const noexcept { return w1.rows(); }
  std::size_t hidden_dim() const noexcept { return w1.cols(); }
  void validate() const;
};

/// phi(X W1 + 1 b1^T) W2 + 1 b2^T
Matrix ffn(const Matrix& x, const FfnParams& p);
/// [phi'(X W1 + 1 b1^T) o (Y W1)] W2: the directional derivative of ffn at X
/// along Y. Biases do not enter.
Matrix ffn_velocity(const Matrix& x, const Matrix& y, const FfnParams& p);

}  // namespace wavy
