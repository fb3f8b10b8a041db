#pragma once

// Numerical check suites shared by the command-line tool and the acceptance
// binary. Every suite is deterministic given its seed.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavy/attention.hpp"
#include "wavy/blocks.hpp"
#include "wavy/cli/config.hpp"
#include "wavy/dynamics.hpp"

namespace wavy::cli {

struct DynamicsSetup {
  Matrix x0;
  AttentionMatrix a;  // symmetric, doubly stochastic
};

/// Seeded Gaussian features and the frozen symmetric attention they induce
/// through a random single-head projection.
DynamicsSetup make_dynamics_setup(const DynamicsConfig& cfg);
StepConfig step_config(const DynamicsConfig& cfg);

/// Random right-stochastic matrix: row softmax of standard normal logits.
AttentionMatrix random_attention(std::size_t n, Prng& prng);

struct SchemeResult {
  double max_rel_error = 0.0;
  std::size_t instances = 0;
};

/// Velocity-first wave_step from (X, (X - X_prev)/tau) against
/// wave_step_direct(X, X_prev): |difference|_inf / |direct|_inf.
SchemeResult scheme_equivalence(std::span<const double> taus, std::size_t per_tau, std::uint64_t seed,
                                std::optional<std::size_t> n = {}, std::optional<std::size_t> d = {});

struct ContractionResult {
  /// max over instances of residual / max(1, |X|_inf)
  double max_scaled_residual = 0.0;
  std::size_t instances = 0;
};

ContractionResult deviation_contraction(std::size_t instances, std::uint64_t seed,
                                        std::optional<std::size_t> n = {}, std::optional<std::size_t> d = {});

struct DiffusionEnergyResult {
  std::size_t steps = 0;
  std::size_t violations = 0;  // U_{k+1} > U_k + violation_tol
  double max_increase = 0.0;
  double u_initial = 0.0;
  double u_final = 0.0;
  double cos_sim_initial = 0.0;
  double cos_sim_final = 0.0;
  bool pass = false;
};

DiffusionEnergyResult diffusion_energy(const DynamicsSetup& setup, double tau, std::size_t steps,
                                       double violation_tol, double cos_sim_gap);

struct WaveEnergyRun {
  double tau = 0.0;
  std::size_t steps = 0;
  double e0 = 0.0;
  double band = 0.0;        // max_k |E_k - E_0| / E_0
  double slope = 0.0;       // least-squares dE/dk
  double slope_rel = 0.0;   // slope / E_0
};

/// Wave rollout from rest.
WaveEnergyRun wave_energy_run(const DynamicsSetup& setup, double tau, std::size_t steps);

struct WaveEnergyStudy {
  WaveEnergyRun base;
  WaveEnergyRun half;  // tau / 2 over twice the steps
  double ratio = 0.0;  // base.band / half.band
  bool band_ok = false;
  bool slope_ok = false;
  bool ratio_ok = false;
  bool pass = false;
};

WaveEnergyStudy wave_energy_study(const DynamicsSetup& setup, const EnergyConfig& cfg);

struct DuDtResult {
  std::size_t states = 0;
  /// Finite-difference rate against -1/2 sum |Xbar_i - X_i|^2.
  double max_rel_error_half = 0.0;
  /// Finite-difference rate against -sum |Xbar_i - X_i|^2.
  double max_rel_error_full = 0.0;
  double min_ratio = 0.0;  // rate / (-1/2 sum ...)
  double max_ratio = 0.0;
};

/// One diffuse step of size tau per state; A is rebuilt for every state.
DuDtResult dudt_check(std::size_t states, double tau, const DynamicsConfig& base);

struct JvpResult {
  std::size_t instances = 0;
  double ffn_max_rel_error = 0.0;
  double ln_max_rel_error = 0.0;
};

/// FFN_v against central differences of FFN, LN_v against the JVP of layer
/// norm with the row statistics held fixed. The mutation flips the sign of
/// FFN_v before comparison.
JvpResult jvp_suite(std::size_t instances, std::uint64_t seed, double eps, Activation activation,
                    Mutation mutation = Mutation::kNone);

struct PrelnResult {
  std::size_t instances = 0;
  double max_abs_error = 0.0;
};

PrelnResult preln_identity(std::size_t instances, std::uint64_t seed, std::optional<std::size_t> n = {},
                           std::optional<std::size_t> d = {});

struct ModelGradResult {
  Variant variant = Variant::kDiffuse;
  LnPlacement placement = LnPlacement::kPost;
  Activation activation = Activation::kGelu;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

ModelGradResult model_grad_check(const GradcheckConfig& cfg, Variant variant, LnPlacement placement,
                                 Activation activation);
/// All four residual variants under both LN placements.
std::vector<ModelGradResult> model_grad_matrix(const GradcheckConfig& cfg);

struct OracleResult {
  std::string block;
  std::size_t instances = 0;
  double max_abs_error = 0.0;
};

/// Library blocks against the straight-line oracles on random parameters,
/// one result per block kind (wavy kinds cycle through every variant).
std::vector<OracleResult> block_oracles(const BlockcheckConfig& cfg);

struct OversmoothingResult {
  std::vector<std::vector<double>> per_seed;  // [sequence][layer]
  std::vector<double> mean;
  std::vector<double> std_dev;  // population
  /// mean[l+1] >= mean[l] for every l >= 1
  bool non_decreasing_after_first = false;
  bool final_exceeds_initial = false;
  /// Largest mean[l] - mean[l+1] over all l; negative when none decreases.
  double largest_decrease = 0.0;
};

OversmoothingResult oversmoothing_probe(const ModelConfig& model, std::uint64_t model_seed,
                                        const ProbeConfig& probe);

}  // namespace wavy::cli
