#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "wavy/blocks.hpp"
#include "wavy/dynamics.hpp"
#include "wavy/norms_ffn.hpp"
#include "wavy/tasks.hpp"
#include "wavy/train.hpp"

namespace wavy::cli {

inline constexpr int kSchemaVersion = 1;

/// Malformed or inconsistent configuration. The message names the offending
/// field path, or the line and column for JSON syntax errors.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DynamicsConfig {
  std::size_t n = 32;
  std::size_t d = 16;
  std::size_t steps = 0;  // required
  double tau = 0.5;
  Variant variant = Variant::kDiffuse;
  double theta = 0.0;
  std::uint64_t seed = 0;
  double feature_std = 1.0;
  /// Std of the single-head query/key weights used to build A.
  double attention_std = 0.3;
  /// Use Wk = Wq, so the raw logits are already symmetric.
  bool shared_qk = true;
  double sinkhorn_tol = 1e-12;
  int sinkhorn_max_iter = 100000;
};

struct EnergyConfig {
  double diffusion_tau = 0.5;
  std::size_t diffusion_steps = 5000;
  double wave_tau = 0.1;
  std::size_t wave_steps = 10000;
  double violation_tol = 1e-12;
  double cos_sim_gap = 1e-6;
  double band_limit = 0.05;
  /// Bound on |best-fit slope| per step, relative to E0.
  double slope_limit = 1e-6;
  double ratio_min = 1.5;
  double ratio_max = 2.5;
};

/// Token batches fed to untrained models for the over-smoothing probe.
/// Sequence s uses model seed model.seed + s and token seed seed + s.
struct ProbeConfig {
  std::size_t sequences = 32;
  std::size_t seq_len = 16;
  std::uint64_t seed = 0;
  double decrease_margin = 1e-6;
};

struct TrainSection {
  TaskSpec task;
  TrainConfig train;
};

enum class Mutation { kNone, kFfnVelocitySign };

struct GradcheckConfig {
  std::size_t samples = 20;
  double eps = 1e-6;
  std::uint64_t seed = 0;
  std::size_t jvp_instances = 100;
  double jvp_eps = 1e-5;
  std::size_t d = 8;
  std::size_t n = 6;
  std::size_t heads = 2;
  std::size_t d_ff = 16;
  std::size_t layers = 2;
  std::size_t vocab = 8;
  std::size_t sequences = 2;
  double init_std = 0.3;
  double theta_init = 0.3;
  Activation activation = Activation::kGelu;
  /// Extra relu model check with the kink filter.
  bool relu_check = true;
  double ffn_tolerance = 1e-6;
  double ln_tolerance = 1e-8;
  double model_tolerance = 1e-5;
  Mutation mutation = Mutation::kNone;
};

struct BlockcheckConfig {
  std::size_t instances = 10;      // per tau for scheme equivalence, per block kind for oracles
  std::size_t preln_instances = 50;
  std::size_t contraction_instances = 100;
  std::optional<std::size_t> n;    // absent: drawn from [1, 16]
  std::optional<std::size_t> d;    // absent: drawn from [2, 32]
  std::uint64_t seed = 0;
  double tolerance = 1e-10;
  double scheme_tolerance = 1e-12;
  double contraction_tolerance = 1e-13;
  std::vector<double> taus{0.1, 0.5, 0.9};
};

struct ExperimentConfig {
  std::optional<ModelConfig> model;
  std::uint64_t model_seed = 0;
  std::optional<DynamicsConfig> dynamics;
  EnergyConfig energy;
  ProbeConfig probe;
  std::optional<TrainSection> train;
  GradcheckConfig gradcheck;
  BlockcheckConfig blockcheck;
  std::string output_dir = "out";
  /// Effective document after preset merging, echoed into summaries.
  nlohmann::json document;
};

/// Parses and validates a configuration document. A preset, when named, is
/// applied first and the document's own keys override it.
ExperimentConfig parse_config(std::string_view text, std::string_view preset = {});
ExperimentConfig load_config(const std::string& path, std::string_view preset = {});

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
nlohmann::json preset(std::string_view name);

}  // namespace wavy::cli
