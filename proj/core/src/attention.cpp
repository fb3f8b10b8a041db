#include "wavy/attention.hpp"

#include <algorithm>
#include <cmath>

#include "wavy/eager_ops.hpp"
#include "wavy/flows.hpp"

namespace wavy {

double AttentionParams::scale() const { return std::sqrt(static_cast<double>(key_dim())); }

void AttentionParams::validate() const {
  const std::size_t h = heads();
  if (h == 0) fail(ErrorCode::kShapeMismatch, "attention needs at least one head");
  if (wk.size() != h || wv.size() != h) fail(ErrorCode::kShapeMismatch, "per-head weight counts differ");
  const std::size_t d = model_dim();
  for (std::size_t i = 0; i < h; ++i) {
    const bool ok = wq[i].rows() == d && wk[i].rows() == d && wv[i].rows() == d &&
                    wq[i].cols() == key_dim() && wk[i].cols() == key_dim() && wv[i].cols() == value_dim();
    if (!ok) fail(ErrorCode::kShapeMismatch, "head " + std::to_string(i) + " has inconsistent shapes");
  }
  if (wo.rows() != h * value_dim() || wo.cols() != d) {
    fail(ErrorCode::kShapeMismatch, "output projection " + wo.shape_string() + " for " +
                                        std::to_string(h) + " heads of width " + std::to_string(value_dim()));
  }
}

AttentionParams AttentionParams::zeros(std::size_t d, std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    fail(ErrorCode::kInvalidArgument, "model width must be a multiple of the head count");
  }
  const std::size_t dh = d / heads;
  AttentionParams p;
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq.emplace_back(d, dh);
    p.wk.emplace_back(d, dh);
    p.wv.emplace_back(d, dh);
  }
  p.wo = Matrix::identity(d);
  return p;
}

AttentionParams AttentionParams::random(std::size_t d, std::size_t heads, Prng& prng, double std_dev) {
  AttentionParams p = zeros(d, heads);
  const std::size_t dh = d / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq[h] = gaussian_init(prng, d, dh, std_dev);
    p.wk[h] = gaussian_init(prng, d, dh, std_dev);
    p.wv[h] = gaussian_init(prng, d, dh, std_dev);
  }
  p.wo = gaussian_init(prng, d, d, std_dev);
  return p;
}

AttentionMatrix::AttentionMatrix(Matrix a) : a_(std::move(a)) {
  if (a_.rows() != a_.cols() || a_.rows() == 0) {
    fail(ErrorCode::kShapeMismatch, "attention matrix must be square, got " + a_.shape_string());
  }
  require_finite(a_, "attention matrix");
  for (std::size_t i = 0; i < a_.rows(); ++i) {
    double total = 0.0;
    for (double v : a_.row(i)) {
      if (v < 0.0 || v > 1.0) fail(ErrorCode::kInvalidArgument, "attention entry outside [0, 1]");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-10) {
      fail(ErrorCode::kInvalidArgument, "attention row " + std::to_string(i) + " sums to " +
                                            std::to_string(total));
    }
  }
}

AttentionMatrix AttentionMatrix::uniform(std::size_t n) {
  return AttentionMatrix(Matrix(n, n, 1.0 / static_cast<double>(n)));
}

AttentionMatrix AttentionMatrix::identity(std::size_t n) { return AttentionMatrix(Matrix::identity(n)); }

bool AttentionMatrix::is_symmetric(double tol) const noexcept {
  for (std::size_t i = 0; i < a_.rows(); ++i)
    for (std::size_t j = i + 1; j < a_.cols(); ++j)
      if (std::abs(a_(i, j) - a_(j, i)) > tol) return false;
  return true;
}

namespace {

void require_input(const Matrix& x, const AttentionParams& p) {
  p.validate();
  if (x.cols() != p.model_dim()) {
    fail(ErrorCode::kShapeMismatch, "attention input " + x.shape_string() + " for model width " +
                                        std::to_string(p.model_dim()));
  }
  require_finite(x, "attention input");
}

}  // namespace

AttentionMatrix attention_matrix(const Matrix& x, const AttentionParams& p, std::size_t head) {
  require_input(x, p);
  if (head >= p.heads()) fail(ErrorCode::kInvalidArgument, "head index out of range");
  const Matrix q = matmul(x, p.wq[head]);
  const Matrix k = matmul(x, p.wk[head]);
  return AttentionMatrix(row_softmax((1.0 / p.scale()) * matmul_nt(q, k)));
}

Matrix attention(const Matrix& x, const AttentionParams& p, std::size_t head) {
  require_input(x, p);
  if (head >= p.heads()) fail(ErrorCode::kInvalidArgument, "head index out of range");
  EagerOps ops;
  return flows::head_attention(ops, x, p, head, 0);
}

Matrix multi_head_attention(const Matrix& x, const AttentionParams& p) {
  require_input(x, p);
  EagerOps ops;
  return flows::multi_head_attention(ops, x, p, 0);
}

Matrix sinkhorn_normalize(Matrix a, double tol, int max_iter) {
  if (!(tol > 0)) fail(ErrorCode::kInvalidArgument, "sinkhorn tolerance must be positive");
  if (a.rows() != a.cols()) fail(ErrorCode::kShapeMismatch, "sinkhorn needs a square matrix");
  const std::size_t n = a.rows();
  bool symmetric = true;
  for (std::size_t i = 0; i < n && symmetric; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (a(i, j) != a(j, i)) {
        symmetric = false;
        break;
      }

  const auto worst_deviation = [n](const Matrix& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      double col = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row += m(i, j);
        col += m(j, i);
      }
      worst = std::max({worst, std::abs(row - 1.0), std::abs(col - 1.0)});
    }
    return worst;
  };

  for (int iter = 0; iter <= max_iter; ++iter) {
    Matrix candidate = a;
    if (symmetric) {
      // The alternating iterates drift off symmetry; the average of a doubly
      // stochastic matrix and its transpose is again doubly stochastic.
      candidate = 0.5 * (a + transpose(a));
    }
    if (worst_deviation(candidate) <= tol) return candidate;
    if (iter == max_iter) break;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (double v : a.row(i)) row += v;
      if (row <= 0) fail(ErrorCode::kSinkhornNoConvergence, "zero row in sinkhorn input");
      for (double& v : a.row(i)) v /= row;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < n; ++i) col += a(i, j);
      if (col <= 0) fail(ErrorCode::kSinkhornNoConvergence, "zero column in sinkhorn input");
      for (std::size_t i = 0; i < n; ++i) a(i, j) /= col;
    }
  }
  fail(ErrorCode::kSinkhornNoConvergence,
       "row/column sums not within " + std::to_string(tol) + " after " + std::to_string(max_iter) +
           " iterations");
}

AttentionMatrix frozen_symmetric_attention(const Matrix& x0, const AttentionParams& p, double tol,
                                           int max_iter) {
  if (tol > 1e-10) fail(ErrorCode::kInvalidArgument, "frozen attention tolerance must be <= 1e-10");
  const Matrix a = attention_matrix(x0, p, 0).matrix();
  return AttentionMatrix(sinkhorn_normalize(0.5 * (a + transpose(a)), tol, max_iter));
}

}  // namespace wavy
