#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "wavy/attention.hpp"

namespace wavy {
namespace {

using test::matrix_near;

// Direct evaluation of softmax(X Wq (X Wk)^T / sqrt(dk)) with scalar loops.
Matrix direct_attention_matrix(const Matrix& x, const Matrix& wq, const Matrix& wk) {
  const Matrix q = test::naive_matmul(x, wq);
  const Matrix k = test::naive_matmul(x, wk);
  const std::size_t n = x.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      a(i, j) = std::exp(s / std::sqrt(static_cast<double>(q.cols())));
      total += a(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) a(i, j) /= total;
  }
  return a;
}

TEST(AttentionMatrix, ZeroProjectionsGiveUniform) {
  const AttentionParams p = AttentionParams::zeros(4, 2);
  const Matrix x = test::random_matrix(1, 5, 4);
  EXPECT_TRUE(matrix_near(attention_matrix(x, p, 1).matrix(), Matrix(5, 5, 0.2), 1e-15));
}

TEST(AttentionMatrix, SingleTokenIsOne) {
  Prng prng(2);
  const AttentionParams p = AttentionParams::random(4, 1, prng, 1.0);
  EXPECT_EQ(attention_matrix(test::random_matrix(3, 1, 4), p, 0).matrix(), Matrix{{1.0}});
}

TEST(AttentionMatrix, MatchesDirectFormula) {
  Prng prng(4);
  const AttentionParams p = AttentionParams::random(4, 2, prng, 0.7);
  const Matrix x = test::random_matrix(5, 3, 4);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_TRUE(matrix_near(attention_matrix(x, p, h).matrix(), direct_attention_matrix(x, p.wq[h], p.wk[h]), 1e-12));
  }
}

TEST(AttentionMatrix, RowsSumToOne) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    Prng prng(50 + s);
    const AttentionParams p = AttentionParams::random(6, 3, prng, 2.0);
    const Matrix a = attention_matrix(gaussian_init(prng, 7, 6, 3.0), p, s % 3).matrix();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const auto r = a.row(i);
      EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-10);
    }
  }
}

TEST(AttentionMatrix, InvariantsEnforced) {
  EXPECT_WAVY_ERROR(AttentionMatrix(Matrix{{0.5, 0.4}, {0.5, 0.5}}), ErrorCode::kInvalidArgument);
  EXPECT_WAVY_ERROR(AttentionMatrix(Matrix{{1.5, -0.5}, {0.5, 0.5}}), ErrorCode::kInvalidArgument);
  EXPECT_WAVY_ERROR(AttentionMatrix(Matrix(2, 3, 1.0 / 3)), ErrorCode::kShapeMismatch);
}

TEST(AttentionMatrix, ShapeAndFiniteness) {
  const AttentionParams p = AttentionParams::zeros(4, 1);
  EXPECT_WAVY_ERROR(attention_matrix(Matrix(3, 5), p, 0), ErrorCode::kShapeMismatch);
  Matrix x(2, 4);
  x(1, 1) = std::nan("");
  EXPECT_WAVY_ERROR(attention_matrix(x, p, 0), ErrorCode::kNonFinite);
}

TEST(Attention, IdentityValueWithUniformAttentionAveragesRows) {
  AttentionParams p = AttentionParams::zeros(3, 1);
  p.wv[0] = Matrix::identity(3);
  const Matrix x = test::random_matrix(6, 4, 3);
  const Matrix out = attention(x, p, 0);
  const Matrix mean = column_means(x);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(i, j), mean(0, j), 1e-15);
  }
}

TEST(Attention, ZeroValueGivesZero) {
  Prng prng(7);
  AttentionParams p = AttentionParams::random(4, 1, prng, 1.0);
  p.wv[0] = Matrix(4, 4);
  EXPECT_EQ(attention(test::random_matrix(8, 5, 4), p, 0), Matrix(5, 4));
}

TEST(Attention, ComposesAttentionMatrixAndMatmul) {
  Prng prng(9);
  const AttentionParams p = AttentionParams::random(6, 2, prng, 0.8);
  const Matrix x = test::random_matrix(10, 5, 6);
  for (std::size_t h = 0; h < 2; ++h) {
    const Matrix expected = test::naive_matmul(attention_matrix(x, p, h).matrix(), test::naive_matmul(x, p.wv[h]));
    EXPECT_TRUE(matrix_near(attention(x, p, h), expected, 1e-12));
  }
}

TEST(Attention, PermutationEquivariance) {
  Prng prng(11);
  const AttentionParams p = AttentionParams::random(4, 2, prng, 1.0);
  const Matrix x = test::random_matrix(12, 6, 4);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Matrix px(6, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 4; ++j) px(i, j) = x(perm[i], j);
  }
  for (std::size_t h = 0; h < 2; ++h) {
    const Matrix base = attention(x, p, h);
    Matrix permuted(base.rows(), base.cols());
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < base.cols(); ++j) permuted(i, j) = base(perm[i], j);
    }
    EXPECT_TRUE(matrix_near(attention(px, p, h), permuted, 1e-10));
  }
}

TEST(MultiHeadAttention, SingleHeadIdentityOutputEqualsHead) {
  Prng prng(13);
  AttentionParams p = AttentionParams::random(4, 1, prng, 1.0);
  p.wo = Matrix::identity(4);
  const Matrix x = test::random_matrix(14, 5, 4);
  EXPECT_TRUE(matrix_near(multi_head_attention(x, p), attention(x, p, 0), 1e-15));
}

TEST(MultiHeadAttention, DuplicatedHeadsAveragedEqualOneHead) {
  Prng prng(15);
  const std::size_t d = 4;
  AttentionParams one;
  one.wq = {gaussian_init(prng, d, d, 1.0)};
  one.wk = {gaussian_init(prng, d, d, 1.0)};
  one.wv = {gaussian_init(prng, d, d, 1.0)};
  one.wo = Matrix::identity(d);
  AttentionParams two;
  two.wq = {one.wq[0], one.wq[0]};
  two.wk = {one.wk[0], one.wk[0]};
  two.wv = {one.wv[0], one.wv[0]};
  const Matrix half = 0.5 * Matrix::identity(d);
  const std::vector<Matrix> parts{half, half};
  two.wo = concat_rows(parts);
  const Matrix x = test::random_matrix(16, 5, d);
  EXPECT_TRUE(matrix_near(multi_head_attention(x, two), multi_head_attention(x, one), 1e-12));
}

TEST(MultiHeadAttention, MatchesConcatThenProject) {
  Prng prng(17);
  const AttentionParams p = AttentionParams::random(6, 2, prng, 0.9);
  const Matrix x = test::random_matrix(18, 4, 6);
  const std::vector<Matrix> heads{attention(x, p, 0), attention(x, p, 1)};
  EXPECT_TRUE(matrix_near(multi_head_attention(x, p), test::naive_matmul(concat_cols(heads), p.wo), 1e-12));
}

TEST(MultiHeadAttention, ValidatesShapes) {
  AttentionParams p = AttentionParams::zeros(4, 2);
  p.wo = Matrix(3, 4);
  EXPECT_WAVY_ERROR(multi_head_attention(Matrix(2, 4), p), ErrorCode::kShapeMismatch);
  EXPECT_WAVY_ERROR(multi_head_attention(Matrix(2, 5), AttentionParams::zeros(4, 2)), ErrorCode::kShapeMismatch);
}

TEST(FrozenSymmetricAttention, UniformIsFixedPoint) {
  const std::size_t n = 5;
  const AttentionParams p = AttentionParams::zeros(4, 1);
  const AttentionMatrix a = frozen_symmetric_attention(test::random_matrix(19, n, 4), p, 1e-12, 1000);
  EXPECT_TRUE(matrix_near(a.matrix(), Matrix(n, n, 1.0 / n), 1e-15));
}

TEST(FrozenSymmetricAttention, DoublyStochasticSymmetricNonnegative) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Prng prng(20 + s);
    const AttentionParams p = AttentionParams::random(6, 1, prng, 0.8);
    const Matrix a = frozen_symmetric_attention(gaussian_init(prng, 9, 6, 1.0), p, 1e-12, 100000).matrix();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double row = 0.0, col = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        row += a(i, j);
        col += a(j, i);
        EXPECT_GE(a(i, j), 0.0);
        EXPECT_EQ(a(i, j), a(j, i));
      }
      EXPECT_NEAR(row, 1.0, 1e-10);
      EXPECT_NEAR(col, 1.0, 1e-10);
    }
  }
}

TEST(FrozenSymmetricAttention, LaplacianSpectrumInZeroTwo) {
  Prng prng(31);
  const AttentionParams p = AttentionParams::random(4, 1, prng, 1.5);
  const Matrix a = frozen_symmetric_attention(gaussian_init(prng, 3, 4, 1.0), p, 1e-12, 100000).matrix();
  Eigen::Matrix3d lap;
  double asym = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      lap(i, j) = (i == j ? 1.0 : 0.0) - a(i, j);
      asym = std::max(asym, std::abs(a(i, j) - a(j, i)));
    }
  }
  EXPECT_LE(asym, 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(lap);
  ASSERT_EQ(solver.info(), Eigen::Success);
  for (int k = 0; k < 3; ++k) {
    EXPECT_GE(solver.eigenvalues()(k), -1e-9);
    EXPECT_LE(solver.eigenvalues()(k), 2.0 + 1e-9);
  }
}

TEST(FrozenSymmetricAttention, Errors) {
  const AttentionParams p = AttentionParams::zeros(4, 1);
  const Matrix x = test::random_matrix(32, 3, 4);
  EXPECT_WAVY_ERROR(frozen_symmetric_attention(x, p, 0.0, 10), ErrorCode::kInvalidArgument);
  EXPECT_WAVY_ERROR(frozen_symmetric_attention(x, p, 1e-6, 10), ErrorCode::kInvalidArgument);
  // A zero-support pattern that Sinkhorn cannot balance: [[1,1],[1,0]].
  EXPECT_WAVY_ERROR(sinkhorn_normalize(Matrix{{1, 1}, {1, 0}}, 1e-12, 200), ErrorCode::kSinkhornNoConvergence);
}

}  // namespace
}  // namespace wavy
