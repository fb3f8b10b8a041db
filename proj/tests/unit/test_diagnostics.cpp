#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "test_support.hpp"
#include "wavy/diagnostics.hpp"

namespace wavy {
namespace {

using test::matrix_near;

// Symmetric doubly stochastic attention with strictly positive entries.
AttentionMatrix symmetric_attention(std::uint64_t seed, const Matrix& x0, double std_dev = 0.3) {
  Prng prng(seed);
  AttentionParams p = AttentionParams::random(x0.cols(), 1, prng, std_dev);
  p.wk = p.wq;
  return frozen_symmetric_attention(x0, p, 1e-12, 100000);
}

TEST(CosineSimilarity, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(Matrix{{1, 0}, {0, 1}}), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Matrix{{3, 4}, {3, 4}, {3, 4}}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Matrix{{1, 0}, {-1, 0}}), -1.0);
}

TEST(CosineSimilarity, Errors) {
  EXPECT_WAVY_ERROR(cosine_similarity(Matrix{{1, 0}, {0, 0}}), ErrorCode::kZeroRow);
  EXPECT_WAVY_ERROR(cosine_similarity(Matrix{{1, 0}}), ErrorCode::kInvalidArgument);
}

TEST(CosineSimilarity, BoundedOnRandomInputs) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double c = cosine_similarity(test::random_matrix(s, 6, 3));
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(AttentionWeightedMean, Examples) {
  const Matrix x = test::random_matrix(1, 4, 3);
  const Matrix mean = column_means(x);
  const Matrix u = attention_weighted_mean(x, AttentionMatrix::uniform(4));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(u(i, j), mean(0, j), 1e-15);
  }
  EXPECT_EQ(attention_weighted_mean(x, AttentionMatrix::identity(4)), x);
  const AttentionMatrix a(row_softmax(test::random_matrix(2, 4, 4)));
  EXPECT_EQ(attention_weighted_mean(x, a), matmul(a.matrix(), x));
  EXPECT_WAVY_ERROR(attention_weighted_mean(x, AttentionMatrix::uniform(3)), ErrorCode::kShapeMismatch);
}

TEST(PotentialEnergy, HandExampleBothForms) {
  const PotentialEnergyForms f = potential_energy_forms(Matrix::identity(2), AttentionMatrix::uniform(2));
  EXPECT_DOUBLE_EQ(f.quadratic, 0.5);
  EXPECT_DOUBLE_EQ(f.pairwise, 0.5);
  EXPECT_DOUBLE_EQ(potential_energy(Matrix::identity(2), AttentionMatrix::uniform(2)), 0.5);
}

TEST(PotentialEnergy, ZeroCases) {
  Matrix uniform_rows(5, 3);
  for (std::size_t i = 0; i < 5; ++i) uniform_rows(i, 0) = 2.0, uniform_rows(i, 1) = -1.0, uniform_rows(i, 2) = 7.0;
  const Matrix x0 = test::random_matrix(3, 5, 3);
  EXPECT_NEAR(potential_energy(uniform_rows, symmetric_attention(4, x0)), 0.0, 1e-12);
  EXPECT_EQ(potential_energy(test::random_matrix(5, 5, 3), AttentionMatrix::identity(5)), 0.0);
}

TEST(PotentialEnergy, FormsAgreeOnRandomSymmetricAttention) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix x = test::random_matrix(10 + s, 7, 4);
    const PotentialEnergyForms f = potential_energy_forms(x, symmetric_attention(30 + s, x, 1.0));
    EXPECT_LE(std::abs(f.quadratic - f.pairwise), 1e-10 * std::abs(f.pairwise));
    EXPECT_GE(f.pairwise, -1e-12);
  }
}

TEST(PotentialEnergy, RejectsAsymmetricAttention) {
  const AttentionMatrix a(Matrix{{0.5, 0.5}, {0.2, 0.8}});
  EXPECT_WAVY_ERROR(potential_energy(Matrix::identity(2), a), ErrorCode::kAsymmetricInput);
  EXPECT_WAVY_ERROR(wave_energy(Matrix::identity(2), Matrix(2, 2), a), ErrorCode::kAsymmetricInput);
}

TEST(WaveEnergy, Examples) {
  const AttentionMatrix u2 = AttentionMatrix::uniform(2);
  EXPECT_DOUBLE_EQ(wave_energy(Matrix::identity(2), Matrix(2, 2), u2), 0.5);
  EXPECT_EQ(wave_energy(Matrix(2, 2, 3.0), Matrix(2, 2), u2), 0.0);
  Matrix y(2, 2);
  y(1, 0) = 1.0;
  EXPECT_DOUBLE_EQ(wave_energy(Matrix(2, 2), y, u2), 0.5);
}

TEST(DeviationContraction, DiffuseStepsSatisfyIdentity) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Matrix x = test::random_matrix(100 + s, 6, 4, 5.0);
    const AttentionMatrix a(row_softmax(test::random_matrix(200 + s, 6, 6)));
    for (double tau : {0.1, 0.5, 1.0}) {
      const double r = deviation_contraction_residual(diffuse_step(x, a, tau), x, a, tau);
      EXPECT_LE(r, 1e-13 * std::max(1.0, max_abs(x)));
    }
  }
}

TEST(DeviationContraction, UnitStepReachesAttentionMean) {
  const Matrix x = test::random_matrix(300, 5, 3);
  const AttentionMatrix a(row_softmax(test::random_matrix(301, 5, 5)));
  const Matrix next = diffuse_step(x, a, 1.0);
  EXPECT_TRUE(matrix_near(next, matmul(a.matrix(), x), 1e-15));
  EXPECT_GT(max_abs(next - matmul(a.matrix(), next)), 0.0);
  EXPECT_LE(deviation_contraction_residual(next, x, a, 1.0), 1e-13 * std::max(1.0, max_abs(x)));
}

TEST(DeviationContraction, UniformRowsGiveRoundoffResidual) {
  const Matrix x(4, 3, 1.25);
  const AttentionMatrix a(row_softmax(test::random_matrix(302, 4, 4)));
  EXPECT_LE(deviation_contraction_residual(diffuse_step(x, a, 0.5), x, a, 0.5), 1e-15);
  EXPECT_WAVY_ERROR(deviation_contraction_residual(Matrix(3, 3), Matrix(4, 3), a, 0.5), ErrorCode::kShapeMismatch);
}

TEST(Trace, EmptyRolloutIsHeaderOnly) {
  const Trace t = record_trace(std::vector<DynamicsState>{}, AttentionMatrix::uniform(2));
  EXPECT_TRUE(t.records.empty());
  EXPECT_EQ(emit_csv(t), std::string(kTraceCsvHeader) + "\n");
}

TEST(Trace, RowPerRolloutState) {
  const Matrix x0 = test::random_matrix(400, 4, 3);
  const AttentionMatrix a = symmetric_attention(401, x0);
  StepConfig cfg;
  cfg.variant = Variant::kWave;
  const Trace t = record_trace(rollout(DynamicsState::at_rest(x0), a, cfg, 3), a);
  ASSERT_EQ(t.records.size(), 4u);
  EXPECT_EQ(t.records.front().step, 0u);
  EXPECT_EQ(t.records.back().step, 3u);
  const std::string csv = emit_csv(t);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
}

TEST(Trace, CsvRoundTripIsExact) {
  Trace t;
  Prng prng(402);
  for (std::size_t k = 0; k < 6; ++k) {
    TraceRecord r;
    r.step = k * 3;
    r.cos_sim = prng.normal();
    r.potential_energy = std::exp(prng.normal() * 20);
    if (k % 2 == 0) r.wave_energy = prng.normal() / 3.0;
    r.deviation_norm = prng.uniform() * 1e-200;
    r.max_abs = 1.0 / 3.0;
    t.records.push_back(r);
  }
  EXPECT_EQ(parse_trace_csv(emit_csv(t)).records, t.records);
}

TEST(Trace, LayerStatesUseUniformGraph) {
  const std::vector<Matrix> states{test::random_matrix(403, 4, 3), test::random_matrix(404, 4, 3)};
  const Trace t = record_trace(states);
  ASSERT_EQ(t.records.size(), 2u);
  EXPECT_FALSE(t.records[0].wave_energy.has_value());
  EXPECT_DOUBLE_EQ(t.records[1].potential_energy, potential_energy(states[1], AttentionMatrix::uniform(4)));
}

TEST(Trace, ValidationAndIo) {
  Trace bad;
  bad.records.resize(2);
  EXPECT_WAVY_ERROR(bad.validate(), ErrorCode::kInvalidArgument);
  bad.records[1].step = 1;
  bad.records[1].cos_sim = std::numeric_limits<double>::quiet_NaN();
  EXPECT_WAVY_ERROR(bad.validate(), ErrorCode::kNonFinite);
  EXPECT_WAVY_ERROR(write_csv(Trace{}, "/nonexistent-dir/x/trace.csv"), ErrorCode::kIoError);
  EXPECT_WAVY_ERROR(parse_trace_csv("nope\n"), ErrorCode::kIoError);
  EXPECT_WAVY_ERROR(parse_trace_csv(std::string(kTraceCsvHeader) + "\n0,1,2\n"), ErrorCode::kIoError);
}

TEST(Trace, WriteCsvMatchesEmit) {
  const std::vector<Matrix> states{test::random_matrix(405, 3, 2)};
  const Trace t = record_trace(states);
  const auto path = std::filesystem::temp_directory_path() / "wavy_trace_test.csv";
  write_csv(t, path.string());
  std::ifstream in(path, std::ios::binary);
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(body, emit_csv(t));
  std::filesystem::remove(path);
}

TEST(FormatDouble, SeventeenDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}

// Along the diffusion with small tau the energy decreases at the rate
// -sum_i |Xbar_i - X_i|^2.
TEST(PotentialEnergy, GradientFlowRate) {
  const double tau = 1e-4;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix x = test::random_matrix(500 + s, 32, 16);
    const AttentionMatrix a = symmetric_attention(600 + s, x);
    const double rate = (potential_energy(diffuse_step(x, a, tau), a) - potential_energy(x, a)) / tau;
    const Matrix dev = attention_weighted_mean(x, a) - x;
    const double expected = -frobenius_norm(dev) * frobenius_norm(dev);
    EXPECT_LE(std::abs(rate - expected), 0.01 * std::abs(expected)) << "seed " << s;
  }
}

TEST(Oversmoothing, DiffusionCosineMonotoneAndConverges) {
  const Matrix x0 = test::random_matrix(700, 32, 16);
  const AttentionMatrix a = symmetric_attention(701, x0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) ASSERT_GT(a.matrix()(i, j), 0.0);
  }
  StepConfig cfg;
  cfg.tau = 0.5;
  const auto traj = rollout(DynamicsState::at_rest(x0), a, cfg, 5000);
  double prev = cosine_similarity(traj[1].x);
  for (std::size_t k = 2; k < traj.size(); ++k) {
    const double c = cosine_similarity(traj[k].x);
    ASSERT_GE(c, prev - 1e-12) << "step " << k;
    prev = c;
  }
  EXPECT_GE(prev, 1.0 - 1e-6);
}

TEST(Oversmoothing, WaveCosineOscillates) {
  const Matrix x0 = test::random_matrix(702, 32, 16);
  const AttentionMatrix a = symmetric_attention(703, x0);
  StepConfig cfg;
  cfg.tau = 0.5;
  cfg.variant = Variant::kWave;
  const auto traj = rollout(DynamicsState::at_rest(x0), a, cfg, 200);
  double largest_drop = -1.0;
  for (std::size_t k = 1; k < traj.size(); ++k) {
    largest_drop = std::max(largest_drop, cosine_similarity(traj[k - 1].x) - cosine_similarity(traj[k].x));
  }
  EXPECT_GT(largest_drop, 1e-6);
}

}  // namespace
}  // namespace wavy
