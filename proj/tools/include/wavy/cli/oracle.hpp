#pragma once

// Straight-line reference evaluations of the block flows. Every routine is a
// scalar loop over explicit indices and shares no arithmetic with the library
// kernels, so agreement with the library is evidence for both.

#include <span>
#include <utility>

#include "wavy/blocks.hpp"

namespace wavy::oracle {

using Pair = std::pair<Matrix, Matrix>;

Matrix mha(const Matrix& x, const AttentionParams& p);
Matrix layer_norm(const Matrix& x, const LayerNormParams& p);
Matrix layer_norm_velocity(const Matrix& x, const Matrix& y, const LayerNormParams& p);
Matrix ffn(const Matrix& x, const FfnParams& p);
Matrix ffn_velocity(const Matrix& x, const Matrix& y, const FfnParams& p);

Matrix post_ln_block(const Matrix& x, const BlockParams& p);
Matrix pre_ln_block(const Matrix& x, const BlockParams& p);
Pair post_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p);
Pair pre_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p);

/// Logits for one sequence.
Matrix model_logits(std::span<const int> tokens, const ModelParams& m);

}  // namespace wavy::oracle
