#pragma once

#include <cstddef>
#include <vector>

#include "wavy/numerics.hpp"

namespace wavy {

/// Per-head query/key/value projections plus the shared output projection.
/// Head h maps X[n x d] to XWq[h] (n x d_k), XWk[h] (n x d_k), XWv[h] (n x d_h);
/// the concatenated head outputs (n x H*d_h) are projected back by wo.
struct AttentionParams {
  std::vector<Matrix> wq;
  std::vector<Matrix> wk;
  std::vector<Matrix> wv;
  Matrix wo;

  std::size_t heads() const noexcept { return wq.size(); }
  std::size_t model_dim() const noexcept { return wq.empty() ? 0 : wq.front().rows(); }
  std::size_t key_dim() const noexcept { return wq.empty() ? 0 : wq.front().cols(); }
  std::size_t value_dim() const noexcept { return wv.empty() ? 0 : wv.front().cols(); }
  /// Logit divisor, sqrt(d_k).
  double scale() const;

  /// Throws ShapeMismatch unless every head shares d, d_k, d_h and
  /// wo is (H*d_h) x d.
  void validate() const;

  /// d_k = d_h = d / heads, all weights zero, wo = I.
  static AttentionParams zeros(std::size_t d, std::size_t heads);
  static AttentionParams random(std::size_t d, std::size_t heads, Prng& prng, double std_dev);
};

/// Right-stochastic n x n matrix. Construction checks rows sum to one within
/// 1e-10 and that every entry lies in [0, 1].
class AttentionMatrix {
 public:
  explicit AttentionMatrix(Matrix a);

  static AttentionMatrix uniform(std::size_t n);
  static AttentionMatrix identity(std::size_t n);

  const Matrix& matrix() const noexcept { return a_; }
  std::size_t size() const noexcept { return a_.rows(); }
  bool is_symmetric(double tol) const noexcept;

 private:
  Matrix a_;
};

AttentionMatrix attention_matrix(const Matrix& x, const AttentionParams& p, std::size_t head);
/// A X Wv for one head.
Matrix attention(const Matrix& x, const AttentionParams& p, std::size_t head);
/// [Attn_1(X), ..., Attn_H(X)] Wo.
Matrix multi_head_attention(const Matrix& x, const AttentionParams& p);

/// Alternating row/column normalisation of a nonnegative square matrix until
/// every row and column sum is within tol of one, followed by a final
/// symmetrisation when the input was symmetric. Throws SinkhornNoConvergence.
Matrix sinkhorn_normalize(Matrix a, double tol, int max_iter);

/// Attention of the initial features (head 0), symmetrised as (A + A^T)/2 and
/// Sinkhorn-normalised to a symmetric doubly-stochastic matrix. tol must not
/// exceed 1e-10 (the AttentionMatrix row-sum invariant).
AttentionMatrix frozen_symmetric_attention(const Matrix& x0, const AttentionParams& p, double tol,
                                           int max_iter);

}  // namespace wavy
