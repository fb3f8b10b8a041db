#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "wavy/attention.hpp"
#include "wavy/numerics.hpp"

namespace wavy {

enum class Variant { kDiffuse, kWave, kMixOutput, kMixVelocity };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

struct DynamicsState {
  Matrix x;                     // token states
  Matrix y;                     // token velocities
  std::optional<Matrix> x_prev;  // previous state, for the two-step scheme

  /// Y = 0, no history.
  static DynamicsState at_rest(Matrix x);
  void validate() const;
};

struct StepConfig {
  double tau = 0.5;
  Variant variant = Variant::kDiffuse;
  /// Gate pre-activation: 1x1 (shared) or 1xd (per feature).
  Matrix theta = Matrix(1, 1, 0.0);

  /// sigmoid(theta), 1x1 or 1xd.
  Matrix lambda() const;
  void validate() const;
};

/// tau A X + (1 - tau) X
Matrix diffuse_step(const Matrix& x, const AttentionMatrix& a, double tau);
/// Y' = tau (A - I) X + Y, then X' = tau Y' + X. The returned state records
/// the input X as its history.
DynamicsState wave_step(const DynamicsState& s, const AttentionMatrix& a, double tau);
/// tau^2 A X_l + (1 - tau^2) X_l + (X_l - X_{l-1})
Matrix wave_step_direct(const Matrix& x_curr, const Matrix& x_prev, const AttentionMatrix& a,
                        double tau);
/// X' = lambda o X_wave + (1 - lambda) o X_diffuse, Y' = wave-branch velocity.
DynamicsState mix_output_step(const DynamicsState& s, const AttentionMatrix& a, const StepConfig& cfg);
/// Y' = lambda o [tau (A - I) X + Y] + (1 - lambda) o (A - I) X, X' = tau Y' + X.
DynamicsState mix_velocity_step(const DynamicsState& s, const AttentionMatrix& a,
                                const StepConfig& cfg);

/// Dispatches on cfg.variant. The diffuse variant carries Y through unchanged.
DynamicsState step(const DynamicsState& s, const AttentionMatrix& a, const StepConfig& cfg);

/// Iterates the configured step with A frozen; returns steps + 1 states
/// starting with s0. Throws NonFinite once any entry exceeds 1e12 in magnitude.
std::vector<DynamicsState> rollout(const DynamicsState& s0, const AttentionMatrix& a,
                                   const StepConfig& cfg, std::size_t steps);

inline constexpr double kDivergenceBound = 1e12;

}  // namespace wavy
