#include "wavy/cli/suites.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wavy/cli/oracle.hpp"
#include "wavy/diagnostics.hpp"
#include "wavy/gradcheck.hpp"
#include "wavy/train.hpp"

namespace wavy::cli {

namespace {

std::size_t draw(Prng& prng, std::optional<std::size_t> fixed, std::size_t lo, std::size_t hi) {
  return fixed ? *fixed : lo + static_cast<std::size_t>(prng.uniform_index(hi - lo + 1));
}

double rel(double diff, double ref) { return diff / std::max(ref, 1e-300); }

LayerNormParams random_ln(std::size_t d, Prng& prng, double beta_std) {
  LayerNormParams p = LayerNormParams::identity(d);
  for (double& g : p.gamma.data()) g = 1.0 + 0.2 * prng.normal();
  for (double& b : p.beta.data()) b = beta_std * prng.normal();
  return p;
}

FfnParams random_ffn(std::size_t d, std::size_t d_ff, Prng& prng, Activation act) {
  FfnParams f;
  f.w1 = gaussian_init(prng, d, d_ff, 0.4);
  f.b1 = gaussian_init(prng, 1, d_ff, 0.3);
  f.w2 = gaussian_init(prng, d_ff, d, 0.4);
  f.b2 = gaussian_init(prng, 1, d, 0.3);
  f.activation = act;
  return f;
}

}  // namespace

DynamicsSetup make_dynamics_setup(const DynamicsConfig& cfg) {
  Prng prng(cfg.seed);
  Matrix x0 = gaussian_init(prng, cfg.n, cfg.d, cfg.feature_std);
  AttentionParams attn = AttentionParams::random(cfg.d, 1, prng, cfg.attention_std);
  if (cfg.shared_qk) attn.wk = attn.wq;
  AttentionMatrix a = frozen_symmetric_attention(x0, attn, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter);
  return {std::move(x0), std::move(a)};
}

StepConfig step_config(const DynamicsConfig& cfg) {
  StepConfig s;
  s.tau = cfg.tau;
  s.variant = cfg.variant;
  s.theta = Matrix(1, 1, cfg.theta);
  return s;
}

AttentionMatrix random_attention(std::size_t n, Prng& prng) {
  return AttentionMatrix(row_softmax(gaussian_init(prng, n, n, 1.0)));
}

SchemeResult scheme_equivalence(std::span<const double> taus, std::size_t per_tau, std::uint64_t seed,
                                std::optional<std::size_t> n, std::optional<std::size_t> d) {
  Prng prng(seed);
  SchemeResult r;
  for (double tau : taus) {
    for (std::size_t k = 0; k < per_tau; ++k) {
      const std::size_t rows = draw(prng, n, 1, 16);
      const std::size_t cols = draw(prng, d, 1, 32);
      const AttentionMatrix a = random_attention(rows, prng);
      const Matrix x_prev = gaussian_init(prng, rows, cols, 1.0);
      const Matrix x = gaussian_init(prng, rows, cols, 1.0);
      DynamicsState s{x, (1.0 / tau) * (x - x_prev), x_prev};
      const Matrix composed = wave_step(s, a, tau).x;
      const Matrix direct = wave_step_direct(x, x_prev, a, tau);
      r.max_rel_error = std::max(r.max_rel_error, rel(max_abs_diff(composed, direct), max_abs(direct)));
      ++r.instances;
    }
  }
  return r;
}

ContractionResult deviation_contraction(std::size_t instances, std::uint64_t seed, std::optional<std::size_t> n,
                                        std::optional<std::size_t> d) {
  Prng prng(seed);
  ContractionResult r;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t rows = draw(prng, n, 1, 16);
    const std::size_t cols = draw(prng, d, 1, 32);
    const double tau = prng.uniform();
    const AttentionMatrix a = random_attention(rows, prng);
    const Matrix x = gaussian_init(prng, rows, cols, 1.0 + 9.0 * prng.uniform());
    const Matrix x_next = diffuse_step(x, a, tau);
    const double scale = std::max(1.0, max_abs(x));
    r.max_scaled_residual =
        std::max(r.max_scaled_residual, deviation_contraction_residual(x_next, x, a, tau) / scale);
    ++r.instances;
  }
  return r;
}

DiffusionEnergyResult diffusion_energy(const DynamicsSetup& setup, double tau, std::size_t steps,
                                       double violation_tol, double cos_sim_gap) {
  DiffusionEnergyResult r;
  r.steps = steps;
  Matrix x = setup.x0;
  double u = potential_energy(x, setup.a);
  r.u_initial = u;
  r.cos_sim_initial = cosine_similarity(x);
  for (std::size_t k = 0; k < steps; ++k) {
    x = diffuse_step(x, setup.a, tau);
    const double next = potential_energy(x, setup.a);
    if (next > u + violation_tol) ++r.violations;
    r.max_increase = std::max(r.max_increase, next - u);
    u = next;
  }
  r.u_final = u;
  r.cos_sim_final = cosine_similarity(x);
  r.pass = r.violations == 0 && r.cos_sim_final >= 1.0 - cos_sim_gap;
  return r;
}

WaveEnergyRun wave_energy_run(const DynamicsSetup& setup, double tau, std::size_t steps) {
  WaveEnergyRun r;
  r.tau = tau;
  r.steps = steps;
  StepConfig cfg;
  cfg.tau = tau;
  cfg.variant = Variant::kWave;
  DynamicsState s = DynamicsState::at_rest(setup.x0);
  r.e0 = wave_energy(s.x, s.y, setup.a);
  // Least-squares slope of E against k, accumulated about the centre index.
  const double centre = 0.5 * static_cast<double>(steps);
  double skk = 0.0;
  double ske = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    if (k > 0) s = step(s, setup.a, cfg);
    const double e = wave_energy(s.x, s.y, setup.a);
    if (!std::isfinite(e)) fail(ErrorCode::kNonFinite, "wave energy became non-finite");
    r.band = std::max(r.band, std::abs(e - r.e0) / r.e0);
    const double dk = static_cast<double>(k) - centre;
    skk += dk * dk;
    ske += dk * (e - r.e0);
  }
  r.slope = skk > 0 ? ske / skk : 0.0;
  r.slope_rel = r.slope / r.e0;
  return r;
}

WaveEnergyStudy wave_energy_study(const DynamicsSetup& setup, const EnergyConfig& cfg) {
  WaveEnergyStudy st;
  st.base = wave_energy_run(setup, cfg.wave_tau, cfg.wave_steps);
  st.half = wave_energy_run(setup, 0.5 * cfg.wave_tau, 2 * cfg.wave_steps);
  st.ratio = st.base.band / st.half.band;
  st.band_ok = st.base.band < cfg.band_limit;
  st.slope_ok = std::abs(st.base.slope_rel) < cfg.slope_limit;
  st.ratio_ok = st.ratio >= cfg.ratio_min && st.ratio <= cfg.ratio_max;
  st.pass = st.band_ok && st.slope_ok && st.ratio_ok;
  return st;
}

DuDtResult dudt_check(std::size_t states, double tau, const DynamicsConfig& base) {
  DuDtResult r;
  r.states = states;
  r.min_ratio = std::numeric_limits<double>::infinity();
  r.max_ratio = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < states; ++k) {
    DynamicsConfig c = base;
    c.seed = base.seed + k;
    const DynamicsSetup setup = make_dynamics_setup(c);
    const Matrix& x = setup.x0;
    const double rate = (potential_energy(diffuse_step(x, setup.a, tau), setup.a) -
                         potential_energy(x, setup.a)) / tau;
    const Matrix dev = attention_weighted_mean(x, setup.a) - x;
    double sq = 0.0;
    for (double v : dev.data()) sq += v * v;
    const double half = -0.5 * sq;
    const double full = -sq;
    r.max_rel_error_half = std::max(r.max_rel_error_half, std::abs(rate - half) / std::abs(half));
    r.max_rel_error_full = std::max(r.max_rel_error_full, std::abs(rate - full) / std::abs(full));
    r.min_ratio = std::min(r.min_ratio, rate / half);
    r.max_ratio = std::max(r.max_ratio, rate / half);
  }
  return r;
}

JvpResult jvp_suite(std::size_t instances, std::uint64_t seed, double eps, Activation activation,
                    Mutation mutation) {
  Prng prng(seed);
  JvpResult r;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = 1 + prng.uniform_index(8);
    const std::size_t d = 2 + prng.uniform_index(15);
    const std::size_t d_ff = 1 + prng.uniform_index(32);
    const FfnParams f = random_ffn(d, d_ff, prng, activation);
    const LayerNormParams ln = random_ln(d, prng, 0.5);
    const Matrix x = gaussian_init(prng, n, d, 1.0);
    const Matrix y = gaussian_init(prng, n, d, 1.0);

    Matrix analytic = ffn_velocity(x, y, f);
    if (mutation == Mutation::kFfnVelocitySign) analytic = -1.0 * analytic;
    const Matrix numeric = central_jvp([&](const Matrix& z) { return ffn(z, f); }, x, y, eps);
    r.ffn_max_rel_error = std::max(r.ffn_max_rel_error, rel(max_abs_diff(analytic, numeric), max_abs(numeric)));

    // Layer norm with mean and deviation frozen at x: an affine map of its input.
    std::vector<RowStats> frozen;
    for (std::size_t i = 0; i < n; ++i) frozen.push_back(row_stats(x.row(i)));
    const auto frozen_ln = [&](const Matrix& z) {
      Matrix out(z.rows(), z.cols());
      for (std::size_t i = 0; i < z.rows(); ++i) {
        const double sd = std::sqrt(frozen[i].variance + ln.eps);
        for (std::size_t j = 0; j < z.cols(); ++j) {
          out(i, j) = (z(i, j) - frozen[i].mean) / sd * ln.gamma(0, j) + ln.beta(0, j);
        }
      }
      return out;
    };
    const Matrix ln_v = layer_norm_velocity(x, y, ln);
    const Matrix ln_jvp = central_jvp(frozen_ln, x, y, eps);
    r.ln_max_rel_error = std::max(r.ln_max_rel_error, rel(max_abs_diff(ln_v, ln_jvp), max_abs(ln_jvp)));
    ++r.instances;
  }
  return r;
}

PrelnResult preln_identity(std::size_t instances, std::uint64_t seed, std::optional<std::size_t> n,
                           std::optional<std::size_t> d) {
  Prng prng(seed);
  PrelnResult r;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t rows = draw(prng, n, 1, 16);
    const std::size_t cols = draw(prng, d, 2, 32);
    BlockParams p;
    p.attn = AttentionParams::random(cols, 1, prng, 0.5);
    // The first instance keeps beta = 0; the rest exercise the source term.
    p.ln1 = random_ln(cols, prng, k == 0 ? 0.0 : 0.7);
    p.ln2 = LayerNormParams::identity(cols);
    p.ffn = random_ffn(cols, cols, prng, Activation::kGelu);
    const Matrix x = gaussian_init(prng, rows, cols, 1.0 + 2.0 * prng.uniform());
    r.max_abs_error = std::max(r.max_abs_error, preln_diffusion_reaction_check(x, p, std::numeric_limits<double>::infinity()).max_abs_error);
    ++r.instances;
  }
  return r;
}

ModelGradResult model_grad_check(const GradcheckConfig& cfg, Variant variant, LnPlacement placement,
                                 Activation activation) {
  ModelConfig c;
  c.vocab = cfg.vocab;
  c.vocab_out = cfg.vocab;
  c.max_len = cfg.n;
  c.d_model = cfg.d;
  c.heads = cfg.heads;
  c.d_ff = cfg.d_ff;
  c.layers = cfg.layers;
  c.ln_placement = placement;
  c.residual_variant = variant;
  c.init_std = cfg.init_std;
  c.theta_init = cfg.theta_init;
  c.activation = activation;
  ModelParams m = init_model(c, cfg.seed + 7);

  TaskSpec task;
  task.vocab = cfg.vocab;
  task.seq_len = cfg.n;
  const Batch batch = make_task(task, Prng(cfg.seed + 3)).next(cfg.sequences);

  GradCheckOptions opts;
  opts.samples = cfg.samples;
  opts.eps = cfg.eps;
  opts.seed = cfg.seed + 11;
  opts.force_params = {"theta"};
  auto params = m.parameters();
  const GradCheckReport rep =
      grad_check([&](TapeOps& ops) { return model_loss(ops, m, batch); }, params, opts);
  return {variant, placement, activation, rep.max_rel_error, rep.checked, rep.excluded};
}

std::vector<ModelGradResult> model_grad_matrix(const GradcheckConfig& cfg) {
  std::vector<ModelGradResult> out;
  for (LnPlacement ln : {LnPlacement::kPost, LnPlacement::kPre}) {
    for (Variant v : {Variant::kDiffuse, Variant::kWave, Variant::kMixOutput, Variant::kMixVelocity}) {
      out.push_back(model_grad_check(cfg, v, ln, cfg.activation));
    }
  }
  return out;
}

std::vector<OracleResult> block_oracles(const BlockcheckConfig& cfg) {
  Prng prng(cfg.seed ^ 0x6f7261636c65ULL);
  std::vector<OracleResult> out{{"post_ln_block", 0, 0.0},
                                {"pre_ln_block", 0, 0.0},
                                {"post_ln_wavy_block", 0, 0.0},
                                {"pre_ln_wavy_block", 0, 0.0}};
  constexpr Variant kCycle[] = {Variant::kDiffuse, Variant::kWave, Variant::kMixOutput, Variant::kMixVelocity};
  for (std::size_t k = 0; k < cfg.instances; ++k) {
    const std::size_t n = draw(prng, cfg.n, 1, 16);
    const std::size_t heads = 1 + prng.uniform_index(2);
    const std::size_t d = cfg.d ? *cfg.d : heads * (1 + prng.uniform_index(16));
    const std::size_t h = d % heads == 0 ? heads : 1;
    BlockParams p;
    p.attn = AttentionParams::random(d, h, prng, 0.5);
    p.ln1 = random_ln(d, prng, 0.5);
    p.ln2 = random_ln(d, prng, 0.5);
    p.ffn = random_ffn(d, 2 * d, prng, k % 2 == 0 ? Activation::kGelu : Activation::kRelu);
    p.step.tau = cfg.taus[k % cfg.taus.size()];
    p.step.variant = kCycle[k % 4];
    p.step.theta = gaussian_init(prng, 1, k % 3 == 0 ? d : 1, 1.0);
    p.wavy = true;
    const Matrix x = gaussian_init(prng, n, d, 1.0);
    const Matrix y = gaussian_init(prng, n, d, 0.5);

    const auto note = [](OracleResult& r, double err) {
      r.max_abs_error = std::max(r.max_abs_error, err);
      ++r.instances;
    };
    note(out[0], max_abs_diff(post_ln_block(x, p), oracle::post_ln_block(x, p)));
    note(out[1], max_abs_diff(pre_ln_block(x, p), oracle::pre_ln_block(x, p)));
    const auto [px, py] = post_ln_wavy_block(x, y, p);
    const auto [ox, oy] = oracle::post_ln_wavy_block(x, y, p);
    note(out[2], std::max(max_abs_diff(px, ox), max_abs_diff(py, oy)));
    const auto [qx, qy] = pre_ln_wavy_block(x, y, p);
    const auto [rx, ry] = oracle::pre_ln_wavy_block(x, y, p);
    note(out[3], std::max(max_abs_diff(qx, rx), max_abs_diff(qy, ry)));
  }
  return out;
}

OversmoothingResult oversmoothing_probe(const ModelConfig& model, std::uint64_t model_seed,
                                        const ProbeConfig& probe) {
  if (probe.seq_len > model.max_len) fail(ErrorCode::kInvalidArgument, "probe.seq_len exceeds model.max_len");
  OversmoothingResult r;
  const std::size_t depth = model.layers + 1;
  for (std::size_t s = 0; s < probe.sequences; ++s) {
    const ModelParams m = init_model(model, model_seed + s);
    Prng prng(probe.seed + s);
    std::vector<int> tokens(probe.seq_len);
    for (int& t : tokens) t = static_cast<int>(prng.uniform_index(model.vocab));
    const ModelOutput out = model_forward(tokens, m);
    std::vector<double> row;
    for (const Matrix& state : out.layer_states) row.push_back(cosine_similarity(state));
    r.per_seed.push_back(std::move(row));
  }
  r.mean.assign(depth, 0.0);
  r.std_dev.assign(depth, 0.0);
  const double count = static_cast<double>(probe.sequences);
  for (std::size_t l = 0; l < depth; ++l) {
    for (const auto& row : r.per_seed) r.mean[l] += row[l] / count;
    for (const auto& row : r.per_seed) r.std_dev[l] += (row[l] - r.mean[l]) * (row[l] - r.mean[l]) / count;
    r.std_dev[l] = std::sqrt(r.std_dev[l]);
  }
  r.non_decreasing_after_first = true;
  r.largest_decrease = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    r.largest_decrease = std::max(r.largest_decrease, r.mean[l] - r.mean[l + 1]);
    if (l >= 1 && r.mean[l + 1] < r.mean[l]) r.non_decreasing_after_first = false;
  }
  r.final_exceeds_initial = r.mean.back() > r.mean.front();
  return r;
}

}  // namespace wavy::cli
