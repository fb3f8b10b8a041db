#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wavy/attention.hpp"
#include "wavy/dynamics.hpp"
#include "wavy/norms_ffn.hpp"

namespace wavy {

enum class LnPlacement { kPost, kPre };
enum class PositionalKind { kLearned, kSinusoidal };
enum class GateShape { kScalar, kVector };
enum class ValueInit { kGaussian, kIdentity };

std::string_view to_string(LnPlacement p);

struct BlockParams {
  AttentionParams attn;
  LayerNormParams ln1;
  LayerNormParams ln2;
  FfnParams ffn;
  StepConfig step;
  /// false: plain diffusive block, Y passes through untouched.
  bool wavy = false;

  std::size_t dim() const noexcept { return attn.model_dim(); }
  void validate() const;
};

/// Mutable handle on one trainable tensor.
struct ParamRef {
  Matrix* value;
  std::string name;
  bool decay;  // false for LN scales/shifts and gate pre-activations
};

struct ModelParams {
  Matrix embedding;   // V x d
  Matrix positional;  // n_max x d
  std::vector<BlockParams> layers;
  LayerNormParams final_ln;
  Matrix head;  // d x V_out
  LnPlacement ln_placement = LnPlacement::kPost;
  PositionalKind positional_kind = PositionalKind::kLearned;

  std::size_t vocab() const noexcept { return embedding.rows(); }
  std::size_t vocab_out() const noexcept { return head.cols(); }
  std::size_t max_len() const noexcept { return positional.rows(); }
  std::size_t dim() const noexcept { return embedding.cols(); }

  void validate() const;
  /// Trainable tensors in declaration order. Fixed sinusoidal positions are
  /// not included.
  std::vector<ParamRef> parameters();
  /// Mean of sigmoid(theta) over gated (mix) wavy layers, if any.
  std::optional<double> lambda_mean() const;
};

/// Which layers use the configured wavy residual. Layer indices are 0-based
/// and the range is inclusive.
struct WavyLayers {
  bool all = true;
  std::size_t first = 0;
  std::size_t last = 0;

  bool contains(std::size_t layer) const noexcept { return all || (layer >= first && layer <= last); }
};

struct ModelConfig {
  std::size_t vocab = 16;
  std::size_t vocab_out = 16;
  std::size_t max_len = 16;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t d_ff = 64;
  std::size_t layers = 4;
  LnPlacement ln_placement = LnPlacement::kPost;
  /// kDiffuse builds a plain diffusive stack regardless of wavy_layers.
  Variant residual_variant = Variant::kDiffuse;
  double tau = 0.5;
  double theta_init = 0.0;
  GateShape gate_shape = GateShape::kScalar;
  WavyLayers wavy_layers;
  Activation activation = Activation::kGelu;
  PositionalKind positional = PositionalKind::kLearned;
  double init_std = 0.02;
  double embed_std = 1.0;
  ValueInit value_init = ValueInit::kGaussian;
  double ln_eps = 1e-5;
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);
Matrix sinusoidal_positions(std::size_t max_len, std::size_t d);

using StatePair = std::pair<Matrix, Matrix>;

/// Diffusive blocks: X' = Attn(X) + X residuals.
Matrix post_ln_block(const Matrix& x, const BlockParams& p);
Matrix pre_ln_block(const Matrix& x, const BlockParams& p);
/// Wavy blocks carrying (X, Y); the residual stage follows p.step.variant.
StatePair post_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p);
StatePair pre_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p);

struct ModelOutput {
  Matrix logits;                      // n x V_out
  std::vector<Matrix> layer_states;   // layer count + 1 snapshots of X
  Matrix x_final;
  std::optional<Matrix> y_final;      // present once a wavy layer ran
};

/// Single sequence forward pass.
ModelOutput model_forward(std::span<const int> tokens, const ModelParams& m);
/// Batched forward pass: tokens holds rows/seq_len sequences back to back and
/// attention never crosses sequence boundaries.
ModelOutput model_forward(std::span<const int> tokens, std::size_t seq_len, const ModelParams& m);

struct DiffusionReactionReport {
  double max_abs_error;
  bool within_tolerance;
};

/// Compares Attn(LN(X)) + X against (A~ Sigma^-1 X S + A~ M) Wv Wo + X with
/// every LN term written in matrix form. Requires a single-head block.
DiffusionReactionReport preln_diffusion_reaction_check(const Matrix& x, const BlockParams& p,
                                                       double tol);

// Binary model format, little-endian:
//   "WVTF" | u32 version | u32 layers | u32 vocab, vocab_out, max_len, d_model,
//   heads, d_ff | u32 ln_placement, positional_kind | f64 final_ln.eps |
//   per layer: u32 wavy, variant, activation, gate_len | f64 tau, ln1.eps, ln2.eps
// followed by row-major f64 tensors in declaration order.
inline constexpr std::uint32_t kModelFormatVersion = 1;
void save_model(const ModelParams& m, const std::string& path);
ModelParams load_model(const std::string& path);
std::vector<unsigned char> serialize_model(const ModelParams& m);
ModelParams deserialize_model(std::span<const unsigned char> bytes);

}  // namespace wavy
