#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "golden_models.hpp"
#include "test_support.hpp"
#include "wavy/blocks.hpp"
#include "wavy/cli/oracle.hpp"

namespace wavy {
namespace {

using test::matrix_near;

LayerNormParams random_ln(Prng& prng, std::size_t d) {
  LayerNormParams p;
  p.gamma = affine(gaussian_init(prng, 1, d, 0.3), 1.0, 1.0);
  p.beta = gaussian_init(prng, 1, d, 0.3);
  p.eps = 1e-5;
  return p;
}

BlockParams random_block(std::uint64_t seed, std::size_t d, std::size_t heads, Variant v, double tau,
                         Activation act = Activation::kGelu) {
  Prng prng(seed);
  BlockParams b;
  b.attn = AttentionParams::random(d, heads, prng, 0.5);
  b.ln1 = random_ln(prng, d);
  b.ln2 = random_ln(prng, d);
  b.ffn.w1 = gaussian_init(prng, d, 2 * d, 0.5);
  b.ffn.b1 = gaussian_init(prng, 1, 2 * d, 0.2);
  b.ffn.w2 = gaussian_init(prng, 2 * d, d, 0.5);
  b.ffn.b2 = gaussian_init(prng, 1, d, 0.2);
  b.ffn.activation = act;
  b.step.tau = tau;
  b.step.variant = v;
  b.step.theta = gaussian_init(prng, 1, seed % 2 == 0 ? 1 : d, 1.0);
  b.wavy = v != Variant::kDiffuse;
  return b;
}

constexpr Variant kVariants[] = {Variant::kDiffuse, Variant::kWave, Variant::kMixOutput, Variant::kMixVelocity};

TEST(Blocks, DiffusiveBlocksMatchLineByLineFlows) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const BlockParams p = random_block(s, 6, 1 + s % 2 + (s % 3 == 0 ? 1 : 0), Variant::kDiffuse, 0.5,
                                       s % 2 ? Activation::kRelu : Activation::kGelu);
    const Matrix x = test::random_matrix(100 + s, 5, 6);
    EXPECT_TRUE(matrix_near(post_ln_block(x, p), oracle::post_ln_block(x, p), 1e-12));
    EXPECT_TRUE(matrix_near(pre_ln_block(x, p), oracle::pre_ln_block(x, p), 1e-12));
  }
}

TEST(Blocks, WavyBlocksMatchLineByLineFlows) {
  for (std::uint64_t s = 0; s < 16; ++s) {
    const Variant v = kVariants[s % 4];
    const BlockParams p = random_block(200 + s, 8, 2, v, 0.3 + 0.04 * s);
    const Matrix x = test::random_matrix(300 + s, 6, 8);
    const Matrix y = test::random_matrix(400 + s, 6, 8);
    const auto post = post_ln_wavy_block(x, y, p);
    const auto post_ref = oracle::post_ln_wavy_block(x, y, p);
    EXPECT_TRUE(matrix_near(post.first, post_ref.first, 1e-12)) << to_string(v);
    EXPECT_TRUE(matrix_near(post.second, post_ref.second, 1e-12)) << to_string(v);
    const auto pre = pre_ln_wavy_block(x, y, p);
    const auto pre_ref = oracle::pre_ln_wavy_block(x, y, p);
    EXPECT_TRUE(matrix_near(pre.first, pre_ref.first, 1e-12)) << to_string(v);
    EXPECT_TRUE(matrix_near(pre.second, pre_ref.second, 1e-12)) << to_string(v);
  }
}

TEST(Blocks, PostLnZeroQueryKeyMeanPoolsValues) {
  BlockParams p = random_block(500, 4, 1, Variant::kWave, 0.5);
  p.attn.wq[0] = Matrix(4, 4);
  p.attn.wk[0] = Matrix(4, 4);
  const Matrix x = test::random_matrix(501, 5, 4);
  const Matrix x1 = multi_head_attention(x, p.attn);
  const Matrix pooled = matmul(matmul(Matrix(5, 5, 0.2), matmul(x, p.attn.wv[0])), p.attn.wo);
  EXPECT_TRUE(matrix_near(x1, pooled, 1e-14));
  const auto out = post_ln_wavy_block(x, Matrix(5, 4), p);
  const auto ref = oracle::post_ln_wavy_block(x, Matrix(5, 4), p);
  EXPECT_TRUE(matrix_near(out.first, ref.first, 1e-12));
  EXPECT_TRUE(matrix_near(out.second, ref.second, 1e-12));
}

TEST(Blocks, ZeroTauDecouplesAttention) {
  BlockParams p = random_block(502, 4, 2, Variant::kWave, 0.0);
  const Matrix x = test::random_matrix(503, 5, 4);
  const Matrix zero(5, 4);
  // Post-LN: X2 = X, so the X stream is LN(X) -> FFN -> add -> LN.
  const Matrix x3 = layer_norm(x, p.ln1);
  const auto post = post_ln_wavy_block(x, zero, p);
  EXPECT_TRUE(matrix_near(post.first, layer_norm(x3 + ffn(x3, p.ffn), p.ln2), 1e-13));
  EXPECT_EQ(post.second, zero);
  // Pre-LN: X^{l+1} = FFN(LN(X)) + X.
  const auto pre = pre_ln_wavy_block(x, zero, p);
  EXPECT_TRUE(matrix_near(pre.first, ffn(layer_norm(x, p.ln2), p.ffn) + x, 1e-13));
  EXPECT_EQ(pre.second, zero);
}

TEST(Blocks, SingleTokenAttentionIsValueProjection) {
  for (Variant v : kVariants) {
    const BlockParams p = random_block(504, 6, 2, v, 0.5);
    const Matrix x = test::random_matrix(505, 1, 6);
    const Matrix y = test::random_matrix(506, 1, 6);
    const std::vector<Matrix> heads{matmul(x, p.attn.wv[0]), matmul(x, p.attn.wv[1])};
    EXPECT_TRUE(matrix_near(multi_head_attention(x, p.attn), matmul(concat_cols(heads), p.attn.wo), 1e-14));
    const auto out = post_ln_wavy_block(x, y, p);
    const auto ref = oracle::post_ln_wavy_block(x, y, p);
    EXPECT_TRUE(matrix_near(out.first, ref.first, 1e-12));
    EXPECT_TRUE(matrix_near(out.second, ref.second, 1e-12));
  }
}

TEST(Blocks, PreLnDegenerateWavyBlock) {
  const double tau = 0.6;
  BlockParams p = random_block(507, 4, 1, Variant::kWave, tau);
  p.attn.wv[0] = Matrix(4, 4);
  p.ffn.w1 = Matrix(4, 8);
  p.ffn.w2 = Matrix(8, 4);
  p.ln1 = LayerNormParams::identity(4);
  p.ln2 = LayerNormParams::identity(4);
  const Matrix x = test::random_matrix(508, 3, 4);
  const Matrix y = test::random_matrix(509, 3, 4);
  const Matrix x3 = x + tau * (tau * (-1.0 * x) + y);
  const auto out = pre_ln_wavy_block(x, y, p);
  EXPECT_TRUE(matrix_near(out.first, add_row(x3, p.ffn.b2), 1e-14));
}

TEST(Blocks, PreLnZeroWeightsPassResidualThrough) {
  BlockParams p = random_block(510, 4, 2, Variant::kDiffuse, 0.5);
  for (auto* w : {&p.attn.wq[0], &p.attn.wq[1], &p.attn.wk[0], &p.attn.wk[1], &p.attn.wv[0], &p.attn.wv[1]}) {
    *w = Matrix(w->rows(), w->cols());
  }
  p.ffn.w1 = Matrix(4, 8);
  p.ffn.w2 = Matrix(8, 4);
  const Matrix x = test::random_matrix(511, 5, 4);
  EXPECT_TRUE(matrix_near(pre_ln_block(x, p), add_row(x, p.ffn.b2), 1e-15));
}

TEST(Blocks, AttentionResidualIsAttentionPlusIdentity) {
  // With LN, FFN stripped to identity-free pieces, the first post-LN stage is
  // A X Wv + X before normalisation.
  BlockParams p = random_block(512, 4, 1, Variant::kDiffuse, 0.5);
  p.attn.wo = Matrix::identity(4);
  const Matrix x = test::random_matrix(513, 5, 4);
  const Matrix a = attention_matrix(x, p.attn, 0).matrix();
  const Matrix stage = multi_head_attention(x, p.attn) + x;
  EXPECT_TRUE(matrix_near(stage, matmul(matmul(a, x), p.attn.wv[0]) + x, 1e-14));
  p.ffn.w1 = Matrix(4, 8);
  p.ffn.w2 = Matrix(8, 4);
  p.ffn.b2 = Matrix(1, 4);
  p.ln2 = LayerNormParams::identity(4);
  const Matrix ln_stage = layer_norm(stage, p.ln1);
  EXPECT_TRUE(matrix_near(post_ln_block(x, p), layer_norm(ln_stage, p.ln2), 1e-14));
}

TEST(Blocks, ValidatesShapes) {
  const BlockParams p = random_block(514, 4, 2, Variant::kWave, 0.5);
  EXPECT_WAVY_ERROR(post_ln_block(Matrix(3, 5), p), ErrorCode::kShapeMismatch);
  EXPECT_WAVY_ERROR(post_ln_wavy_block(Matrix(3, 4), Matrix(2, 4), p), ErrorCode::kShapeMismatch);
  BlockParams bad = p;
  bad.step.tau = -1.0;
  EXPECT_WAVY_ERROR(pre_ln_wavy_block(Matrix(3, 4), Matrix(3, 4), bad), ErrorCode::kInvalidArgument);
}

TEST(PrelnIdentity, NormalisedInputsReduceToPlainAttention) {
  BlockParams p = random_block(515, 4, 1, Variant::kDiffuse, 0.5);
  p.ln1 = LayerNormParams::identity(4, 0.0);
  Matrix x = layer_norm(test::random_matrix(516, 5, 4), p.ln1);
  const DiffusionReactionReport rep = preln_diffusion_reaction_check(x, p, 1e-12);
  EXPECT_LE(rep.max_abs_error, 1e-12);
  EXPECT_TRUE(matrix_near(multi_head_attention(layer_norm(x, p.ln1), p.attn) + x, multi_head_attention(x, p.attn) + x,
                          1e-12));
}

TEST(PrelnIdentity, RandomInstancesWithAndWithoutShift) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    BlockParams p = random_block(600 + s, 6, 1, Variant::kDiffuse, 0.5);
    if (s % 2 == 0) p.ln1.beta = Matrix(1, 6);
    const Matrix x = test::random_matrix(700 + s, 7, 6, 2.0);
    const DiffusionReactionReport rep = preln_diffusion_reaction_check(x, p, 1e-10);
    EXPECT_TRUE(rep.within_tolerance) << rep.max_abs_error;
  }
  EXPECT_WAVY_ERROR(preln_diffusion_reaction_check(Matrix(3, 6), random_block(1, 6, 2, Variant::kDiffuse, 0.5), 1e-10),
                    ErrorCode::kInvalidArgument);
}

ModelConfig small_config(Variant v, LnPlacement ln) {
  ModelConfig c;
  c.vocab = 10;
  c.vocab_out = 6;
  c.max_len = 8;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.layers = 3;
  c.ln_placement = ln;
  c.residual_variant = v;
  c.init_std = 0.4;
  c.theta_init = -0.2;
  return c;
}

const std::vector<int> kTokens{3, 1, 4, 1, 5, 9, 2};

TEST(Model, ForwardMatchesOracleForEveryVariantAndPlacement) {
  for (LnPlacement ln : {LnPlacement::kPost, LnPlacement::kPre}) {
    for (Variant v : kVariants) {
      const ModelParams m = init_model(small_config(v, ln), 42);
      const ModelOutput out = model_forward(kTokens, m);
      EXPECT_TRUE(matrix_near(out.logits, oracle::model_logits(kTokens, m), 1e-12)) << to_string(v);
      EXPECT_EQ(out.layer_states.size(), m.layers.size() + 1);
      EXPECT_EQ(out.y_final.has_value(), v != Variant::kDiffuse);
    }
  }
}

TEST(Model, ZeroLayerModel) {
  ModelConfig c = small_config(Variant::kDiffuse, LnPlacement::kPost);
  c.layers = 0;
  const ModelParams post = init_model(c, 1);
  const Matrix x = gather_rows(post.embedding, kTokens) + slice_rows(post.positional, 0, kTokens.size());
  EXPECT_TRUE(matrix_near(model_forward(kTokens, post).logits, matmul(x, post.head), 1e-14));
  c.ln_placement = LnPlacement::kPre;
  const ModelParams pre = init_model(c, 1);
  EXPECT_TRUE(matrix_near(model_forward(kTokens, pre).logits, matmul(layer_norm(x, pre.final_ln), pre.head), 1e-14));
}

TEST(Model, PartialWavyInsertionChangesTraceNotShapes) {
  ModelConfig all = small_config(Variant::kWave, LnPlacement::kPost);
  ModelConfig last = all;
  last.wavy_layers = WavyLayers{false, 2, 2};
  const ModelParams a = init_model(all, 5);
  const ModelParams b = init_model(last, 5);
  EXPECT_FALSE(b.layers[0].wavy);
  EXPECT_TRUE(b.layers[2].wavy);
  const ModelOutput oa = model_forward(kTokens, a);
  const ModelOutput ob = model_forward(kTokens, b);
  ASSERT_EQ(oa.layer_states.size(), ob.layer_states.size());
  for (std::size_t l = 0; l < oa.layer_states.size(); ++l) EXPECT_TRUE(oa.layer_states[l].same_shape(ob.layer_states[l]));
  EXPECT_NE(oa.layer_states[1], ob.layer_states[1]);
  EXPECT_TRUE(matrix_near(ob.logits, oracle::model_logits(kTokens, b), 1e-12));
}

TEST(Model, AllFlagsFalseIsBitwiseBaseline) {
  for (LnPlacement ln : {LnPlacement::kPost, LnPlacement::kPre}) {
    ModelParams m = init_model(small_config(Variant::kMixVelocity, ln), 6);
    for (auto& layer : m.layers) layer.wavy = false;
    Matrix x = gather_rows(m.embedding, kTokens) + slice_rows(m.positional, 0, kTokens.size());
    for (const auto& layer : m.layers) x = ln == LnPlacement::kPost ? post_ln_block(x, layer) : pre_ln_block(x, layer);
    if (ln == LnPlacement::kPre) x = layer_norm(x, m.final_ln);
    const ModelOutput out = model_forward(kTokens, m);
    EXPECT_EQ(out.logits, matmul(x, m.head));
    EXPECT_FALSE(out.y_final.has_value());
  }
}

TEST(Model, BatchedForwardEqualsPerSequence) {
  const ModelParams m = init_model(small_config(Variant::kMixOutput, LnPlacement::kPre), 7);
  const std::vector<int> a{1, 2, 3, 4}, b{9, 8, 7, 6};
  std::vector<int> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const ModelOutput batched = model_forward(both, 4, m);
  const std::vector<Matrix> parts{model_forward(a, m).logits, model_forward(b, m).logits};
  EXPECT_TRUE(matrix_near(batched.logits, concat_rows(parts), 1e-14));
}

TEST(Model, InputValidation) {
  const ModelParams m = init_model(small_config(Variant::kWave, LnPlacement::kPost), 8);
  EXPECT_WAVY_ERROR(model_forward(std::vector<int>{1, 10}, m), ErrorCode::kVocabOverflow);
  EXPECT_WAVY_ERROR(model_forward(std::vector<int>(9, 1), m), ErrorCode::kShapeMismatch);
}

TEST(Model, ParameterListAndDecayFlags) {
  ModelParams m = init_model(small_config(Variant::kMixOutput, LnPlacement::kPre), 9);
  std::size_t gates = 0;
  for (const ParamRef& p : m.parameters()) {
    const bool no_decay = p.name.find("ln") != std::string::npos || p.name.find(".b") != std::string::npos ||
                          p.name.find("theta") != std::string::npos;
    EXPECT_EQ(p.decay, !no_decay) << p.name;
    gates += p.name.find("theta") != std::string::npos;
  }
  EXPECT_EQ(gates, m.layers.size());
  ASSERT_TRUE(m.lambda_mean().has_value());
  EXPECT_NEAR(*m.lambda_mean(), 1.0 / (1.0 + std::exp(0.2)), 1e-15);
  ModelConfig sin = small_config(Variant::kDiffuse, LnPlacement::kPost);
  sin.positional = PositionalKind::kSinusoidal;
  ModelParams fixed = init_model(sin, 9);
  for (const ParamRef& p : fixed.parameters()) EXPECT_NE(p.name, "positional");
  EXPECT_FALSE(fixed.lambda_mean().has_value());
}

TEST(Model, SinusoidalPositions) {
  const Matrix pe = sinusoidal_positions(4, 6);
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(1, 0), std::sin(1.0), 1e-15);
}

TEST(Serialization, RoundTripIsBitExact) {
  for (LnPlacement ln : {LnPlacement::kPost, LnPlacement::kPre}) {
    for (Variant v : kVariants) {
      ModelConfig c = small_config(v, ln);
      c.gate_shape = v == Variant::kMixOutput ? GateShape::kVector : GateShape::kScalar;
      const ModelParams m = init_model(c, 10);
      const auto bytes = serialize_model(m);
      const ModelParams back = deserialize_model(bytes);
      EXPECT_EQ(serialize_model(back), bytes);
      EXPECT_EQ(model_forward(kTokens, back).logits, model_forward(kTokens, m).logits);
    }
  }
}

TEST(Serialization, HeaderLayout) {
  const auto bytes = serialize_model(init_model(small_config(Variant::kWave, LnPlacement::kPost), 11));
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "WVTF");
  EXPECT_EQ(bytes[4], kModelFormatVersion);
  EXPECT_EQ(bytes[8], 3);  // layer count, little-endian
}

TEST(Serialization, RejectsCorruptInput) {
  auto bytes = serialize_model(init_model(small_config(Variant::kWave, LnPlacement::kPost), 12));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_WAVY_ERROR(deserialize_model(bad_magic), ErrorCode::kIoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_WAVY_ERROR(deserialize_model(truncated), ErrorCode::kIoError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_WAVY_ERROR(deserialize_model(trailing), ErrorCode::kIoError);
  auto version = bytes;
  version[4] = 99;
  EXPECT_WAVY_ERROR(deserialize_model(version), ErrorCode::kIoError);
  EXPECT_WAVY_ERROR(load_model("/nonexistent/model.wvtf"), ErrorCode::kIoError);
}

TEST(Serialization, FileRoundTrip) {
  const ModelParams m = init_model(small_config(Variant::kMixVelocity, LnPlacement::kPre), 13);
  const auto path = (std::filesystem::temp_directory_path() / "wavy_blocks_test.wvtf").string();
  save_model(m, path);
  EXPECT_EQ(serialize_model(load_model(path)), serialize_model(m));
  std::filesystem::remove(path);
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Golden, LogitsMatchReferenceFile) {
  for (const auto& c : test::golden_cases()) {
    const std::string base = std::string(WAVY_TEST_DATA_DIR) + "/" + c.name;
    const ModelParams m = load_model(base + ".wvtf");
    // The stored file pins both the initialiser stream and the format.
    EXPECT_EQ(serialize_model(init_model(c.config, c.seed)), read_bytes(base + ".wvtf")) << c.name;
    std::ifstream in(base + ".logits");
    ASSERT_TRUE(in) << base;
    std::size_t rows = 0, cols = 0;
    in >> rows >> cols;
    Matrix expected(rows, cols);
    for (double& v : expected.data()) in >> v;
    ASSERT_TRUE(in) << "malformed " << base;
    EXPECT_TRUE(matrix_near(model_forward(c.tokens, m).logits, expected, 1e-12)) << c.name;
  }
}

}  // namespace
}  // namespace wavy
