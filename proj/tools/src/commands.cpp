#include "wavy/cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"

#include "wavy/cli/suites.hpp"
#include "wavy/diagnostics.hpp"
#include "wavy/train.hpp"

namespace wavy::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path output_path(const ExperimentConfig& cfg, const std::string& file) {
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create output directory " + dir.string() + ": " + ec.message());
  return dir / file;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::kIoError, "write failed for " + path.string());
}

void write_json(const ExperimentConfig& cfg, const std::string& file, const json& j) {
  write_text(output_path(cfg, file), j.dump(2) + "\n");
}

json base_summary(std::string_view command, const ExperimentConfig& cfg) {
  return {{"command", command}, {"config", cfg.document}};
}

json record_json(const TraceRecord& r) {
  json j{{"step", r.step},
         {"cos_sim", r.cos_sim},
         {"potential_energy", r.potential_energy},
         {"deviation_norm", r.deviation_norm},
         {"max_abs", r.max_abs}};
  j["wave_energy"] = r.wave_energy ? json(*r.wave_energy) : json(nullptr);
  return j;
}

template <class T>
const T& require_section(const std::optional<T>& section, std::string_view name, std::string_view command) {
  if (!section) {
    throw ConfigError(std::string(name) + ": section required by " + std::string(command));
  }
  return *section;
}

int cmd_simulate(const ExperimentConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  const DynamicsConfig& dyn = require_section(cfg.dynamics, "dynamics", "simulate");
  const DynamicsSetup setup = make_dynamics_setup(dyn);
  const StepConfig step_cfg = step_config(dyn);
  step_cfg.validate();

  Trace trace;
  DynamicsState s = DynamicsState::at_rest(setup.x0);
  std::size_t increases = 0;
  for (std::size_t k = 0; k <= dyn.steps; ++k) {
    if (k > 0) {
      s = step(s, setup.a, step_cfg);
      if (!all_finite(s.x) || !all_finite(s.y) || max_abs(s.x) > kDivergenceBound) {
        fail(ErrorCode::kNonFinite, "rollout diverged at step " + std::to_string(k));
      }
    }
    TraceRecord r = record_trace(std::vector<DynamicsState>{s}, setup.a).records.front();
    r.step = k;
    if (!trace.records.empty() && r.potential_energy > trace.records.back().potential_energy + cfg.energy.violation_tol) {
      ++increases;
    }
    trace.records.push_back(r);
  }
  write_csv(trace, output_path(cfg, "trace.csv").string());

  json summary = base_summary("simulate", cfg);
  summary["variant"] = to_string(dyn.variant);
  summary["steps"] = dyn.steps;
  summary["initial"] = record_json(trace.records.front());
  summary["final"] = record_json(trace.records.back());
  summary["potential_energy_increases"] = increases;
  summary["wall_clock_seconds"] = seconds_since(start);
  write_json(cfg, "summary.json", summary);
  log << "simulate: " << dyn.steps << " steps of " << to_string(dyn.variant) << ", final cos_sim "
      << format_double(trace.records.back().cos_sim) << "\n";
  return kExitOk;
}

int cmd_oversmoothing(const ExperimentConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  const ModelConfig& model = require_section(cfg.model, "model", "oversmoothing");
  const OversmoothingResult r = oversmoothing_probe(model, cfg.model_seed, cfg.probe);

  std::string layers = "layer,mean_cos_sim,std_cos_sim\n";
  for (std::size_t l = 0; l < r.mean.size(); ++l) {
    layers += std::to_string(l) + "," + format_double(r.mean[l]) + "," + format_double(r.std_dev[l]) + "\n";
  }
  write_text(output_path(cfg, "oversmoothing.csv"), layers);
  std::string seeds = "sequence,layer,cos_sim\n";
  for (std::size_t s = 0; s < r.per_seed.size(); ++s) {
    for (std::size_t l = 0; l < r.per_seed[s].size(); ++l) {
      seeds += std::to_string(s) + "," + std::to_string(l) + "," + format_double(r.per_seed[s][l]) + "\n";
    }
  }
  write_text(output_path(cfg, "oversmoothing_per_seed.csv"), seeds);

  json summary = base_summary("oversmoothing", cfg);
  summary["mean_cos_sim"] = r.mean;
  summary["std_cos_sim"] = r.std_dev;
  summary["non_decreasing_after_first"] = r.non_decreasing_after_first;
  summary["final_exceeds_initial"] = r.final_exceeds_initial;
  summary["largest_decrease"] = r.mean.size() > 1 ? json(r.largest_decrease) : json(nullptr);
  summary["has_decrease"] = r.mean.size() > 1 && r.largest_decrease > cfg.probe.decrease_margin;
  summary["wall_clock_seconds"] = seconds_since(start);
  write_json(cfg, "summary.json", summary);
  log << "oversmoothing: mean cos_sim " << format_double(r.mean.front()) << " -> "
      << format_double(r.mean.back()) << " over " << model.layers << " layers\n";
  return kExitOk;
}

json wave_run_json(const WaveEnergyRun& w) {
  return {{"tau", w.tau}, {"steps", w.steps}, {"e0", w.e0}, {"band", w.band}, {"slope", w.slope},
          {"slope_rel", w.slope_rel}};
}

int cmd_energy(const ExperimentConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  const DynamicsConfig& dyn = require_section(cfg.dynamics, "dynamics", "energy");
  const EnergyConfig& e = cfg.energy;
  const DynamicsSetup setup = make_dynamics_setup(dyn);
  const DiffusionEnergyResult diff =
      diffusion_energy(setup, e.diffusion_tau, e.diffusion_steps, e.violation_tol, e.cos_sim_gap);
  const WaveEnergyStudy wave = wave_energy_study(setup, e);

  json report = base_summary("energy", cfg);
  report["diffusion"] = {{"tau", e.diffusion_tau},
                         {"steps", diff.steps},
                         {"violations", diff.violations},
                         {"max_increase", diff.max_increase},
                         {"u_initial", diff.u_initial},
                         {"u_final", diff.u_final},
                         {"cos_sim_initial", diff.cos_sim_initial},
                         {"cos_sim_final", diff.cos_sim_final},
                         {"pass", diff.pass}};
  report["wave"] = {{"base", wave_run_json(wave.base)},
                    {"half_tau", wave_run_json(wave.half)},
                    {"band_ratio", wave.ratio},
                    {"band_ok", wave.band_ok},
                    {"slope_ok", wave.slope_ok},
                    {"ratio_ok", wave.ratio_ok},
                    {"pass", wave.pass}};
  const bool pass = diff.pass && wave.pass;
  report["pass"] = pass;
  report["wall_clock_seconds"] = seconds_since(start);
  write_json(cfg, "energy.json", report);
  log << "energy: diffusion " << (diff.pass ? "pass" : "FAIL") << " (" << diff.violations
      << " violations), wave " << (wave.pass ? "pass" : "FAIL") << " (band " << format_double(wave.base.band)
      << ", ratio " << format_double(wave.ratio) << ")\n";
  return pass ? kExitOk : kExitFailure;
}

std::string_view activation_name(Activation a) { return a == Activation::kGelu ? "gelu" : "relu"; }

json grad_json(const ModelGradResult& g, double tol) {
  return {{"variant", to_string(g.variant)},
          {"ln_placement", to_string(g.placement)},
          {"activation", activation_name(g.activation)},
          {"max_rel_error", g.max_rel_error},
          {"checked", g.checked},
          {"excluded", g.excluded},
          {"pass", g.max_rel_error <= tol && g.checked > 0}};
}

int cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  const GradcheckConfig& g = cfg.gradcheck;
  const JvpResult jvp = jvp_suite(g.jvp_instances, g.seed, g.jvp_eps, g.activation, g.mutation);
  const bool ffn_ok = jvp.ffn_max_rel_error <= g.ffn_tolerance;
  const bool ln_ok = jvp.ln_max_rel_error <= g.ln_tolerance;

  json report = base_summary("gradcheck", cfg);
  report["jvp"] = {{"instances", jvp.instances},
                   {"ffn_velocity_max_rel_error", jvp.ffn_max_rel_error},
                   {"ffn_velocity_pass", ffn_ok},
                   {"ln_velocity_max_rel_error", jvp.ln_max_rel_error},
                   {"ln_velocity_pass", ln_ok}};
  bool pass = ffn_ok && ln_ok;
  double worst = 0.0;
  json models = json::array();
  for (const auto& r : model_grad_matrix(g)) {
    models.push_back(grad_json(r, g.model_tolerance));
    pass = pass && models.back()["pass"].get<bool>();
    worst = std::max(worst, r.max_rel_error);
  }
  if (g.relu_check) {
    const auto r = model_grad_check(g, Variant::kMixVelocity, LnPlacement::kPost, Activation::kRelu);
    models.push_back(grad_json(r, g.model_tolerance));
    pass = pass && models.back()["pass"].get<bool>();
    worst = std::max(worst, r.max_rel_error);
  }
  report["models"] = models;
  report["model_max_rel_error"] = worst;
  report["pass"] = pass;
  report["wall_clock_seconds"] = seconds_since(start);
  write_json(cfg, "gradcheck.json", report);
  log << "gradcheck: ffn_v " << format_double(jvp.ffn_max_rel_error) << ", ln_v "
      << format_double(jvp.ln_max_rel_error) << ", model " << format_double(worst) << " -> "
      << (pass ? "pass" : "FAIL") << "\n";
  return pass ? kExitOk : kExitFailure;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  const TrainSection& t = require_section(cfg.train, "train", "train");
  const ModelConfig model_cfg = cfg.model.value_or(ModelConfig{});
  const TrainResult r = train(init_model(model_cfg, cfg.model_seed), t.task, t.train);

  write_text(output_path(cfg, "metrics.jsonl"), metrics_jsonl(r.log));
  save_model(r.model, output_path(cfg, "model.wvtf").string());

  json summary = base_summary("train", cfg);
  summary["steps_logged"] = r.log.size();
  summary["diverged"] = r.diverged;
  summary["error"] = r.error;
  if (!r.log.empty()) {
    const MetricsRecord& last = r.log.back();
    summary["final"] = {{"step", last.step},
                        {"loss", last.loss},
                        {"accuracy", last.accuracy},
                        {"train_loss", last.train_loss},
                        {"lambda_mean", last.lambda_mean ? json(*last.lambda_mean) : json(nullptr)}};
  }
  summary["wall_clock_seconds"] = seconds_since(start);
  write_json(cfg, "summary.json", summary);
  if (r.diverged) {
    log << "train: diverged (" << r.error << "); last finite model saved\n";
    return kExitFailure;
  }
  if (r.log.empty()) {
    log << "train: 0 steps, initial model saved\n";
  } else {
    log << "train: step " << r.log.back().step << " val accuracy " << format_double(r.log.back().accuracy)
        << "\n";
  }
  return kExitOk;
}

int cmd_blockcheck(const ExperimentConfig& cfg, std::ostream& log) {
  const auto start = Clock::now();
  const BlockcheckConfig& b = cfg.blockcheck;
  const SchemeResult scheme = scheme_equivalence(b.taus, b.instances, b.seed, b.n, b.d);
  const ContractionResult contraction = deviation_contraction(b.contraction_instances, b.seed + 1, b.n, b.d);
  const PrelnResult preln = preln_identity(b.preln_instances, b.seed + 2, b.n, b.d);
  const std::vector<OracleResult> oracles = block_oracles(b);

  json report = base_summary("blockcheck", cfg);
  const bool scheme_ok = scheme.max_rel_error <= b.scheme_tolerance;
  const bool contraction_ok = contraction.max_scaled_residual <= b.contraction_tolerance;
  const bool preln_ok = preln.max_abs_error <= b.tolerance;
  report["scheme_equivalence"] = {
      {"instances", scheme.instances}, {"max_rel_error", scheme.max_rel_error}, {"pass", scheme_ok}};
  report["deviation_contraction"] = {{"instances", contraction.instances},
                                     {"max_scaled_residual", contraction.max_scaled_residual},
                                     {"pass", contraction_ok}};
  report["preln_diffusion_reaction"] = {
      {"instances", preln.instances}, {"max_abs_error", preln.max_abs_error}, {"pass", preln_ok}};
  bool pass = scheme_ok && contraction_ok && preln_ok;
  double worst_oracle = 0.0;
  json blocks = json::array();
  for (const auto& o : oracles) {
    const bool ok = o.max_abs_error <= b.tolerance;
    blocks.push_back({{"block", o.block}, {"instances", o.instances}, {"max_abs_error", o.max_abs_error}, {"pass", ok}});
    pass = pass && ok;
    worst_oracle = std::max(worst_oracle, o.max_abs_error);
  }
  report["block_oracles"] = blocks;
  report["pass"] = pass;
  report["wall_clock_seconds"] = seconds_since(start);
  write_json(cfg, "blockcheck.json", report);
  log << "blockcheck: scheme " << format_double(scheme.max_rel_error) << ", contraction "
      << format_double(contraction.max_scaled_residual) << ", preln " << format_double(preln.max_abs_error)
      << ", oracles " << format_double(worst_oracle) << " -> " << (pass ? "pass" : "FAIL") << "\n";
  return pass ? kExitOk : kExitFailure;
}

}  // namespace

std::vector<std::string> command_names() {
  return {"simulate", "oversmoothing", "energy", "gradcheck", "train", "blockcheck"};
}

int run_command(std::string_view name, const ExperimentConfig& cfg, std::ostream& log) {
  if (name == "simulate") return cmd_simulate(cfg, log);
  if (name == "oversmoothing") return cmd_oversmoothing(cfg, log);
  if (name == "energy") return cmd_energy(cfg, log);
  if (name == "gradcheck") return cmd_gradcheck(cfg, log);
  if (name == "train") return cmd_train(cfg, log);
  if (name == "blockcheck") return cmd_blockcheck(cfg, log);
  throw ConfigError("command: unknown command \"" + std::string(name) + "\"");
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusive and wavy residual dynamics for transformer blocks"};
  app.name("wavy");
  std::string command;
  std::string config_path;
  std::string preset_name;
  std::string out_dir;
  app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(command_names()));
  app.add_option("--config", config_path, "Experiment configuration (JSON)")->required();
  app.add_option("--preset", preset_name, "Named hyperparameter preset applied beneath the config");
  app.add_option("--out", out_dir, "Output directory, overriding output.dir");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, preset_name);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    return run_command(command, cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace wavy::cli
