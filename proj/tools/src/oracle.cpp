#include "wavy/cli/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace wavy::oracle {

namespace {

Matrix mm(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix plus(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) + b(i, j);
  }
  return c;
}

double phi(double z, Activation kind) {
  if (kind == Activation::kRelu) return z > 0 ? z : 0.0;
  return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2));
}

double dphi(double z, Activation kind) {
  if (kind == Activation::kRelu) return z > 0 ? 1.0 : 0.0;
  const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + z * pdf;
}

// Mean and biased standard deviation (with eps) of one row.
std::pair<double, double> stats(const Matrix& x, std::size_t i, double eps) {
  const std::size_t d = x.cols();
  double mu = 0.0;
  for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
  var /= static_cast<double>(d);
  return {mu, std::sqrt(var + eps)};
}

double lambda_at(const StepConfig& s, std::size_t j) {
  const double theta = s.theta.cols() == 1 ? s.theta(0, 0) : s.theta(0, j);
  return 1.0 / (1.0 + std::exp(-theta));
}

// Residual stage on attention output z, anchored on (x, y).
Pair residual(const Matrix& x, const Matrix& y, const Matrix& z, const StepConfig& s) {
  const double tau = s.tau;
  Matrix xn(x.rows(), x.cols());
  Matrix yn(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double force = z(i, j) - x(i, j);
      const double y_wave = tau * force + y(i, j);
      const double x_wave = tau * y_wave + x(i, j);
      const double x_diff = tau * z(i, j) + (1.0 - tau) * x(i, j);
      const double lam = lambda_at(s, j);
      switch (s.variant) {
        case Variant::kDiffuse:
          xn(i, j) = x_diff;
          yn(i, j) = y(i, j);
          break;
        case Variant::kWave:
          xn(i, j) = x_wave;
          yn(i, j) = y_wave;
          break;
        case Variant::kMixOutput:
          xn(i, j) = lam * x_wave + (1.0 - lam) * x_diff;
          yn(i, j) = y_wave;
          break;
        case Variant::kMixVelocity:
          yn(i, j) = lam * y_wave + (1.0 - lam) * force;
          xn(i, j) = tau * yn(i, j) + x(i, j);
          break;
      }
    }
  }
  return {xn, yn};
}

}  // namespace

Matrix mha(const Matrix& x, const AttentionParams& p) {
  const std::size_t n = x.rows();
  const std::size_t dh = p.value_dim();
  const double scale = std::sqrt(static_cast<double>(p.key_dim()));
  Matrix concat(n, p.heads() * dh);
  for (std::size_t h = 0; h < p.heads(); ++h) {
    const Matrix q = mm(x, p.wq[h]);
    const Matrix k = mm(x, p.wk[h]);
    const Matrix v = mm(x, p.wv[h]);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logit(n);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
        logit[j] = s / scale;
        top = std::max(top, logit[j]);
      }
      double total = 0.0;
      for (double& l : logit) {
        l = std::exp(l - top);
        total += l;
      }
      for (std::size_t c = 0; c < dh; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += logit[j] / total * v(j, c);
        concat(i, h * dh + c) = s;
      }
    }
  }
  return mm(concat, p.wo);
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& p) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto [mu, sd] = stats(x, i, p.eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mu) / sd * p.gamma(0, j) + p.beta(0, j);
  }
  return out;
}

Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const LayerNormParams& p) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double sd = stats(x, i, p.eps).second;
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = y(i, j) / sd * p.gamma(0, j);
  }
  return out;
}

Matrix ffn(const Matrix& x, const FfnParams& p) {
  Matrix hidden = mm(x, p.w1);
  for (std::size_t i = 0; i < hidden.rows(); ++i) {
    for (std::size_t k = 0; k < hidden.cols(); ++k) hidden(i, k) = phi(hidden(i, k) + p.b1(0, k), p.activation);
  }
  Matrix out = mm(hidden, p.w2);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += p.b2(0, j);
  }
  return out;
}

Matrix ffn_velocity(const Matrix& x, const Matrix& y, const FfnParams& p) {
  const Matrix pre = mm(x, p.w1);
  Matrix hidden = mm(y, p.w1);
  for (std::size_t i = 0; i < hidden.rows(); ++i) {
    for (std::size_t k = 0; k < hidden.cols(); ++k) hidden(i, k) *= dphi(pre(i, k) + p.b1(0, k), p.activation);
  }
  return mm(hidden, p.w2);
}

Matrix post_ln_block(const Matrix& x, const BlockParams& p) {
  const Matrix x1 = oracle::mha(x, p.attn);
  const Matrix x2 = plus(x1, x);
  const Matrix x3 = oracle::layer_norm(x2, p.ln1);
  const Matrix x4 = oracle::ffn(x3, p.ffn);
  const Matrix x5 = plus(x3, x4);
  return oracle::layer_norm(x5, p.ln2);
}

Matrix pre_ln_block(const Matrix& x, const BlockParams& p) {
  const Matrix x1 = oracle::layer_norm(x, p.ln1);
  const Matrix x2 = oracle::mha(x1, p.attn);
  const Matrix x3 = plus(x, x2);
  const Matrix x4 = oracle::layer_norm(x3, p.ln2);
  const Matrix x5 = oracle::ffn(x4, p.ffn);
  return plus(x5, x3);
}

Pair post_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p) {
  const Matrix x1 = oracle::mha(x, p.attn);
  const auto [x2, y1] = residual(x, y, x1, p.step);
  const Matrix x3 = oracle::layer_norm(x2, p.ln1);
  const Matrix y2 = oracle::layer_norm_velocity(x2, y1, p.ln1);
  const Matrix x4 = oracle::ffn(x3, p.ffn);
  const Matrix y3 = oracle::ffn_velocity(x3, y2, p.ffn);
  const Matrix x5 = plus(x3, x4);
  const Matrix y4 = plus(y2, y3);
  return {oracle::layer_norm(x5, p.ln2), oracle::layer_norm_velocity(x5, y4, p.ln2)};
}

Pair pre_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p) {
  const Matrix x1 = oracle::layer_norm(x, p.ln1);
  const Matrix x2 = oracle::mha(x1, p.attn);
  const auto [x3, y2] = residual(x, y, x2, p.step);
  const Matrix x4 = oracle::layer_norm(x3, p.ln2);
  const Matrix y3 = oracle::layer_norm_velocity(x3, y2, p.ln2);
  const Matrix x5 = oracle::ffn(x4, p.ffn);
  const Matrix y4 = oracle::ffn_velocity(x4, y3, p.ffn);
  return {plus(x5, x3), plus(y4, y2)};
}

Matrix model_logits(std::span<const int> tokens, const ModelParams& m) {
  const std::size_t n = tokens.size();
  Matrix x(n, m.dim());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m.dim(); ++j) {
      x(i, j) = m.embedding(static_cast<std::size_t>(tokens[i]), j) + m.positional(i, j);
    }
  }
  Matrix y;
  for (const auto& layer : m.layers) {
    const bool pre = m.ln_placement == LnPlacement::kPre;
    if (!layer.wavy) {
      x = pre ? oracle::pre_ln_block(x, layer) : oracle::post_ln_block(x, layer);
      continue;
    }
    if (y.empty()) y = Matrix(n, m.dim());
    auto next = pre ? oracle::pre_ln_wavy_block(x, y, layer) : oracle::post_ln_wavy_block(x, y, layer);
    x = std::move(next.first);
    y = std::move(next.second);
  }
  if (m.ln_placement == LnPlacement::kPre) x = oracle::layer_norm(x, m.final_ln);
  return mm(x, m.head);
}

}  // namespace wavy::oracle
