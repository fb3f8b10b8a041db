#include "wavy/optim.hpp"

#include <cmath>

namespace wavy {

void adamw_step(AdamWState& state, Matrix& param, const Matrix& grad, double lr, const AdamWConfig& cfg,
                bool decay) {
  require_same_shape(param, grad, "adamw parameter/gradient");
  if (state.m.empty()) {
    state.m = Matrix(param.rows(), param.cols());
    state.v = Matrix(param.rows(), param.cols());
  }
  require_same_shape(param, state.m, "adamw moments");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double shrink = decay ? lr * cfg.weight_decay : 0.0;
  auto p = param.data();
  auto m = state.m.data();
  auto v = state.v.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= shrink * p[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

double lr_schedule(std::size_t step, std::size_t total, double base_lr, double warmup_frac) {
  if (step > total) fail(ErrorCode::kInvalidArgument, "schedule step beyond total");
  if (!(warmup_frac >= 0 && warmup_frac <= 1)) fail(ErrorCode::kInvalidArgument, "warmup_frac must lie in [0, 1]");
  if (total == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double n = static_cast<double>(total);
  const double warmup = warmup_frac * n;
  if (s < warmup) return base_lr * s / warmup;
  if (warmup >= n) return base_lr;
  return base_lr * (n - s) / (n - warmup);
}

void AdamW::step(std::span<const ParamRef> params, std::span<const Matrix> grads, double lr) {
  if (params.size() != grads.size()) fail(ErrorCode::kShapeMismatch, "one gradient per parameter required");
  if (states_.empty()) states_.resize(params.size());
  if (states_.size() != params.size()) fail(ErrorCode::kShapeMismatch, "parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    adamw_step(states_[k], *params[k].value, grads[k], lr, cfg_, params[k].decay);
  }
}

}  // namespace wavy
