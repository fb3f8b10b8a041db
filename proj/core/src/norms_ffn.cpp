#include "wavy/norms_ffn.hpp"

#include <cmath>
#include <numbers>

#include "wavy/eager_ops.hpp"
#include "wavy/flows.hpp"

namespace wavy {

namespace {

double normal_pdf(double z) noexcept { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

template <class Fn>
Matrix map(const Matrix& z, Fn fn) {
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) out.data()[i] = fn(z.data()[i]);
  return out;
}

void require_ln_shapes(const Matrix& x, const Matrix& gamma, double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols()) {
    fail(ErrorCode::kShapeMismatch, "layer norm scale " + gamma.shape_string() + " for input " +
                                        x.shape_string());
  }
  if (eps < 0) fail(ErrorCode::kInvalidArgument, "layer norm eps must be nonnegative");
}

}  // namespace

double activation(double z, Activation kind) noexcept {
  switch (kind) {
    case Activation::kRelu: return z > 0 ? z : 0.0;
    case Activation::kGelu: return z * normal_cdf(z);
  }
  return z;
}

double activation_derivative(double z, Activation kind) noexcept {
  switch (kind) {
    case Activation::kRelu: return z > 0 ? 1.0 : 0.0;
    case Activation::kGelu: return normal_cdf(z) + z * normal_pdf(z);
  }
  return 1.0;
}

double activation_second_derivative(double z, Activation kind) noexcept {
  switch (kind) {
    case Activation::kRelu: return 0.0;
    case Activation::kGelu: return normal_pdf(z) * (2.0 - z * z);
  }
  return 0.0;
}

Matrix activation(const Matrix& z, Activation kind) {
  return map(z, [kind](double v) { return activation(v, kind); });
}

Matrix activation_derivative(const Matrix& z, Activation kind) {
  return map(z, [kind](double v) { return activation_derivative(v, kind); });
}

LayerNormParams LayerNormParams::identity(std::size_t d, double eps) {
  return {Matrix(1, d, 1.0), Matrix(1, d, 0.0), eps};
}

RowStats row_stats(std::span<const double> x) noexcept {
  const double d = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= d;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return {mean, var / d};
}

std::vector<double> layer_norm(std::span<const double> x_row, const LayerNormParams& p) {
  const Matrix out = layer_norm(Matrix::row_vector(x_row), p);
  return {out.data().begin(), out.data().end()};
}

std::vector<double> layer_norm_velocity(std::span<const double> x_row, std::span<const double> y_row,
                                        const LayerNormParams& p) {
  const Matrix out = layer_norm_velocity(Matrix::row_vector(x_row), Matrix::row_vector(y_row), p);
  return {out.data().begin(), out.data().end()};
}

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
  require_ln_shapes(x, gamma, eps);
  require_same_shape(gamma, beta, "layer norm shift");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto in = x.row(i);
    const auto [mean, var] = row_stats(in);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - mean) * inv * gamma(0, j) + beta(0, j);
  }
  return out;
}

Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const Matrix& gamma, double eps) {
  require_ln_shapes(x, gamma, eps);
  require_same_shape(x, y, "layer_norm_velocity");
  Matrix out(y.rows(), y.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double inv = 1.0 / std::sqrt(row_stats(x.row(i)).variance + eps);
    const auto in = y.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] * inv * gamma(0, j);
  }
  return out;
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& p) { return layer_norm(x, p.gamma, p.beta, p.eps); }

Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const LayerNormParams& p) {
  return layer_norm_velocity(x, y, p.gamma, p.eps);
}

void FfnParams::validate() const {
  const bool ok = w1.rows() == w2.cols() && w1.cols() == w2.rows() && b1.rows() == 1 &&
                  b1.cols() == w1.cols() && b2.rows() == 1 && b2.cols() == w2.cols();
  if (!ok) {
    fail(ErrorCode::kShapeMismatch, "ffn shapes w1 " + w1.shape_string() + " b1 " + b1.shape_string() +
                                        " w2 " + w2.shape_string() + " b2 " + b2.shape_string());
  }
}

Matrix ffn(const Matrix& x, const FfnParams& p) {
  p.validate();
  EagerOps ops;
  return flows::ffn(ops, x, p);
}

Matrix ffn_velocity(const Matrix& x, const Matrix& y, const FfnParams& p) {
  p.validate();
  require_same_shape(x, y, "ffn_velocity");
  EagerOps ops;
  return flows::ffn_velocity(ops, x, y, p);
}

}  // namespace wavy
