#pragma once

// Block and residual flows written once against an "ops" backend. The eager
// backend (EagerOps) evaluates on plain matrices; the tape backend (TapeOps)
// records the same sequence for reverse-mode differentiation.
//
// A backend provides: Value, param, constant, zeros, rows, add, sub, scale,
// affine, hadamard, matmul, matmul_nt, add_row, mul_row, sigmoid,
// row_softmax, layer_norm, layer_norm_velocity, activation,
// activation_derivative, slice_rows, concat_rows, concat_cols, gather_rows.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "wavy/blocks.hpp"

namespace wavy::flows {

template <class Ops>
using Val = typename Ops::Value;

inline std::size_t seg_len_or_all(std::size_t rows, std::size_t seq_len) {
  return seq_len == rows ? 0 : seq_len;
}

template <class Ops>
struct Pair {
  Val<Ops> x;
  Val<Ops> y;
};

/// Per-segment scaled dot-product attention for one head. seg_len == 0 means
/// the whole input is one sequence.
template <class Ops>
Val<Ops> head_attention(Ops& ops, const Val<Ops>& x, const AttentionParams& p, std::size_t head,
                        std::size_t seg_len) {
  const auto q = ops.matmul(x, ops.param(p.wq[head]));
  const auto k = ops.matmul(x, ops.param(p.wk[head]));
  const auto v = ops.matmul(x, ops.param(p.wv[head]));
  const double inv_scale = 1.0 / p.scale();
  const std::size_t rows = ops.rows(x);
  if (seg_len == 0 || seg_len == rows) {
    const auto a = ops.row_softmax(ops.scale(ops.matmul_nt(q, k), inv_scale));
    return ops.matmul(a, v);
  }
  std::vector<Val<Ops>> parts;
  parts.reserve(rows / seg_len);
  for (std::size_t start = 0; start < rows; start += seg_len) {
    const auto qs = ops.slice_rows(q, start, seg_len);
    const auto ks = ops.slice_rows(k, start, seg_len);
    const auto vs = ops.slice_rows(v, start, seg_len);
    const auto a = ops.row_softmax(ops.scale(ops.matmul_nt(qs, ks), inv_scale));
    parts.push_back(ops.matmul(a, vs));
  }
  return ops.concat_rows(std::span<const Val<Ops>>(parts));
}

template <class Ops>
Val<Ops> multi_head_attention(Ops& ops, const Val<Ops>& x, const AttentionParams& p,
                              std::size_t seg_len) {
  std::vector<Val<Ops>> heads;
  heads.reserve(p.heads());
  for (std::size_t h = 0; h < p.heads(); ++h) heads.push_back(head_attention(ops, x, p, h, seg_len));
  return ops.matmul(ops.concat_cols(std::span<const Val<Ops>>(heads)), ops.param(p.wo));
}

template <class Ops>
Val<Ops> ffn(Ops& ops, const Val<Ops>& x, const FfnParams& p) {
  const auto pre = ops.add_row(ops.matmul(x, ops.param(p.w1)), ops.param(p.b1));
  return ops.add_row(ops.matmul(ops.activation(pre, p.activation), ops.param(p.w2)), ops.param(p.b2));
}

template <class Ops>
Val<Ops> ffn_velocity(Ops& ops, const Val<Ops>& x, const Val<Ops>& y, const FfnParams& p) {
  const auto w1 = ops.param(p.w1);
  const auto pre = ops.add_row(ops.matmul(x, w1), ops.param(p.b1));
  const auto transported = ops.matmul(y, w1);
  return ops.matmul(ops.hadamard(ops.activation_derivative(pre, p.activation), transported),
                    ops.param(p.w2));
}

template <class Ops>
Val<Ops> layer_norm(Ops& ops, const Val<Ops>& x, const LayerNormParams& p) {
  return ops.layer_norm(x, ops.param(p.gamma), ops.param(p.beta), p.eps);
}

/// LN on the state stream and LN_v on the velocity stream, both driven by the
/// state's row statistics.
template <class Ops>
Pair<Ops> joint_layer_norm(Ops& ops, const Val<Ops>& x, const Val<Ops>& y, const LayerNormParams& p) {
  const auto gamma = ops.param(p.gamma);
  return {ops.layer_norm(x, gamma, ops.param(p.beta), p.eps),
          ops.layer_norm_velocity(x, y, gamma, p.eps)};
}

/// The residual update applied after attention. z is the attention output
/// (A X in the analysis form, Attn(.) inside blocks) and x the state the
/// residual is anchored on.
template <class Ops>
Pair<Ops> residual_stage(Ops& ops, const Val<Ops>& x, const Val<Ops>& y, const Val<Ops>& z,
                         const StepConfig& step) {
  const double tau = step.tau;
  switch (step.variant) {
    case Variant::kDiffuse:
      return {ops.add(ops.scale(z, tau), ops.scale(x, 1.0 - tau)), y};
    case Variant::kWave: {
      const auto y_next = ops.add(ops.scale(ops.sub(z, x), tau), y);
      return {ops.add(ops.scale(y_next, tau), x), y_next};
    }
    case Variant::kMixOutput: {
      const auto y_wave = ops.add(ops.scale(ops.sub(z, x), tau), y);
      const auto x_wave = ops.add(ops.scale(y_wave, tau), x);
      const auto x_diffuse = ops.add(ops.scale(z, tau), ops.scale(x, 1.0 - tau));
      const auto lambda = ops.sigmoid(ops.param(step.theta));
      const auto x_next = ops.add(ops.mul_row(x_wave, lambda),
                                  ops.mul_row(x_diffuse, ops.affine(lambda, -1.0, 1.0)));
      return {x_next, y_wave};
    }
    case Variant::kMixVelocity: {
      const auto force = ops.sub(z, x);
      const auto wave_velocity = ops.add(ops.scale(force, tau), y);
      const auto lambda = ops.sigmoid(ops.param(step.theta));
      const auto y_next = ops.add(ops.mul_row(wave_velocity, lambda),
                                  ops.mul_row(force, ops.affine(lambda, -1.0, 1.0)));
      return {ops.add(ops.scale(y_next, tau), x), y_next};
    }
  }
  return {x, y};
}

// Post-LN diffusive block: attention, residual add, LN, FFN, add, LN.
template <class Ops>
Val<Ops> post_ln_block(Ops& ops, const Val<Ops>& x, const BlockParams& p, std::size_t seg_len) {
  const auto x1 = multi_head_attention(ops, x, p.attn, seg_len);
  const auto x2 = ops.add(x1, x);
  const auto x3 = layer_norm(ops, x2, p.ln1);
  const auto x4 = ffn(ops, x3, p.ffn);
  const auto x5 = ops.add(x3, x4);
  return layer_norm(ops, x5, p.ln2);
}

// Pre-LN diffusive block: LN inside each residual branch.
template <class Ops>
Val<Ops> pre_ln_block(Ops& ops, const Val<Ops>& x, const BlockParams& p, std::size_t seg_len) {
  const auto x1 = layer_norm(ops, x, p.ln1);
  const auto x2 = multi_head_attention(ops, x1, p.attn, seg_len);
  const auto x3 = ops.add(x, x2);
  const auto x4 = layer_norm(ops, x3, p.ln2);
  const auto x5 = ffn(ops, x4, p.ffn);
  return ops.add(x5, x3);
}

// Post-LN wavy block: attention, wave residual, joint LN, FFN/FFN_v with
// residual adds, joint LN.
template <class Ops>
Pair<Ops> post_ln_wavy_block(Ops& ops, const Val<Ops>& x, const Val<Ops>& y, const BlockParams& p,
                             std::size_t seg_len) {
  const auto x1 = multi_head_attention(ops, x, p.attn, seg_len);
  const auto [x2, y1] = residual_stage(ops, x, y, x1, p.step);
  const auto [x3, y2] = joint_layer_norm(ops, x2, y1, p.ln1);
  const auto x4 = ffn(ops, x3, p.ffn);
  const auto y3 = ffn_velocity(ops, x3, y2, p.ffn);
  const auto x5 = ops.add(x3, x4);
  const auto y4 = ops.add(y2, y3);
  return joint_layer_norm(ops, x5, y4, p.ln2);
}

// Pre-LN wavy block. The normalised velocity of the first joint LN is
// never consumed (the residual stage anchors on Y^l), so only the state half
// is evaluated.
template <class Ops>
Pair<Ops> pre_ln_wavy_block(Ops& ops, const Val<Ops>& x, const Val<Ops>& y, const BlockParams& p,
                            std::size_t seg_len) {
  const auto x1 = layer_norm(ops, x, p.ln1);
  const auto x2 = multi_head_attention(ops, x1, p.attn, seg_len);
  const auto [x3, y2] = residual_stage(ops, x, y, x2, p.step);
  const auto [x4, y3] = joint_layer_norm(ops, x3, y2, p.ln2);
  const auto x5 = ffn(ops, x4, p.ffn);
  const auto y4 = ffn_velocity(ops, x4, y3, p.ffn);
  return {ops.add(x5, x3), ops.add(y4, y2)};
}

template <class Ops>
struct Forward {
  Val<Ops> logits;
  std::vector<Val<Ops>> layer_states;
  Val<Ops> x_final;
  std::optional<Val<Ops>> y_final;
};

template <class Ops>
Forward<Ops> model_forward(Ops& ops, std::span<const int> tokens, std::size_t seq_len,
                           const ModelParams& m) {
  const std::size_t rows = tokens.size();
  if (seq_len == 0 || rows % seq_len != 0) {
    fail(ErrorCode::kShapeMismatch, "token count is not a multiple of the sequence length");
  }
  if (seq_len > m.max_len()) {
    fail(ErrorCode::kShapeMismatch, "sequence length " + std::to_string(seq_len) +
                                        " exceeds max_len " + std::to_string(m.max_len()));
  }
  std::vector<int> positions(rows);
  for (std::size_t i = 0; i < rows; ++i) positions[i] = static_cast<int>(i % seq_len);

  const auto pos_table = m.positional_kind == PositionalKind::kLearned ? ops.param(m.positional)
                                                                       : ops.constant(m.positional);
  auto x = ops.add(ops.gather_rows(ops.param(m.embedding), tokens),
                   ops.gather_rows(pos_table, std::span<const int>(positions)));

  Forward<Ops> out{x, {}, x, std::nullopt};
  out.layer_states.reserve(m.layers.size() + 1);
  out.layer_states.push_back(x);
  std::optional<Val<Ops>> y;
  const bool pre = m.ln_placement == LnPlacement::kPre;
  for (const auto& layer : m.layers) {
    if (!layer.wavy) {
      x = pre ? pre_ln_block(ops, x, layer, seg_len_or_all(rows, seq_len))
              : post_ln_block(ops, x, layer, seg_len_or_all(rows, seq_len));
    } else {
      if (!y) y = ops.zeros(rows, m.dim());
      auto next = pre ? pre_ln_wavy_block(ops, x, *y, layer, seg_len_or_all(rows, seq_len))
                      : post_ln_wavy_block(ops, x, *y, layer, seg_len_or_all(rows, seq_len));
      x = next.x;
      y = next.y;
    }
    out.layer_states.push_back(x);
  }
  if (pre) {
    if (y) {
      auto fin = joint_layer_norm(ops, x, *y, m.final_ln);
      x = fin.x;
      y = fin.y;
    } else {
      x = layer_norm(ops, x, m.final_ln);
    }
  }
  out.x_final = x;
  out.y_final = y;
  out.logits = ops.matmul(x, ops.param(m.head));
  return out;
}

}  // namespace wavy::flows
