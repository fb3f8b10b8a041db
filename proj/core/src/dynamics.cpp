#include "wavy/dynamics.hpp"

#include "wavy/eager_ops.hpp"
#include "wavy/flows.hpp"

namespace wavy {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kDiffuse: return "diffuse";
    case Variant::kWave: return "wave";
    case Variant::kMixOutput: return "mix_output";
    case Variant::kMixVelocity: return "mix_velocity";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : {Variant::kDiffuse, Variant::kWave, Variant::kMixOutput, Variant::kMixVelocity}) {
    if (to_string(v) == name) return v;
  }
  return std::nullopt;
}

DynamicsState DynamicsState::at_rest(Matrix x) {
  Matrix y(x.rows(), x.cols());
  return {std::move(x), std::move(y), std::nullopt};
}

void DynamicsState::validate() const {
  require_same_shape(x, y, "state/velocity");
  if (x_prev) require_same_shape(x, *x_prev, "state/history");
}

Matrix StepConfig::lambda() const { return sigmoid(theta); }

void StepConfig::validate() const {
  if (!(tau > 0)) fail(ErrorCode::kInvalidArgument, "tau must be positive");
  if (theta.rows() != 1 || theta.cols() == 0) {
    fail(ErrorCode::kShapeMismatch, "gate theta must be a 1x1 or 1xd row, got " + theta.shape_string());
  }
}

namespace {

void require_operands(const Matrix& x, const AttentionMatrix& a) {
  if (a.size() != x.rows()) {
    fail(ErrorCode::kShapeMismatch, "attention of size " + std::to_string(a.size()) + " for state " +
                                        x.shape_string());
  }
}

StepConfig with_variant(StepConfig cfg, Variant v) {
  cfg.variant = v;
  return cfg;
}

DynamicsState run_residual(const DynamicsState& s, const AttentionMatrix& a, const StepConfig& cfg) {
  s.validate();
  require_operands(s.x, a);
  cfg.validate();
  EagerOps ops;
  const Matrix z = matmul(a.matrix(), s.x);
  auto next = flows::residual_stage(ops, s.x, s.y, z, cfg);
  return {std::move(next.x), std::move(next.y), s.x};
}

}  // namespace

Matrix diffuse_step(const Matrix& x, const AttentionMatrix& a, double tau) {
  StepConfig cfg;
  cfg.tau = tau;
  return run_residual(DynamicsState::at_rest(x), a, cfg).x;
}

DynamicsState wave_step(const DynamicsState& s, const AttentionMatrix& a, double tau) {
  StepConfig cfg;
  cfg.tau = tau;
  cfg.variant = Variant::kWave;
  return run_residual(s, a, cfg);
}

Matrix wave_step_direct(const Matrix& x_curr, const Matrix& x_prev, const AttentionMatrix& a,
                        double tau) {
  require_same_shape(x_curr, x_prev, "wave_step_direct history");
  require_operands(x_curr, a);
  const double tau2 = tau * tau;
  return tau2 * matmul(a.matrix(), x_curr) + (1.0 - tau2) * x_curr + (x_curr - x_prev);
}

DynamicsState mix_output_step(const DynamicsState& s, const AttentionMatrix& a, const StepConfig& cfg) {
  return run_residual(s, a, with_variant(cfg, Variant::kMixOutput));
}

DynamicsState mix_velocity_step(const DynamicsState& s, const AttentionMatrix& a,
                                const StepConfig& cfg) {
  return run_residual(s, a, with_variant(cfg, Variant::kMixVelocity));
}

DynamicsState step(const DynamicsState& s, const AttentionMatrix& a, const StepConfig& cfg) {
  return run_residual(s, a, cfg);
}

std::vector<DynamicsState> rollout(const DynamicsState& s0, const AttentionMatrix& a,
                                   const StepConfig& cfg, std::size_t steps) {
  std::vector<DynamicsState> out;
  out.reserve(steps + 1);
  out.push_back(s0);
  for (std::size_t k = 0; k < steps; ++k) {
    out.push_back(step(out.back(), a, cfg));
    const auto& s = out.back();
    if (!all_finite(s.x) || !all_finite(s.y) || max_abs(s.x) > kDivergenceBound ||
        max_abs(s.y) > kDivergenceBound) {
      fail(ErrorCode::kNonFinite, "rollout diverged at step " + std::to_string(k + 1));
    }
  }
  return out;
}

}  // namespace wavy
