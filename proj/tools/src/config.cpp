#include "wavy/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace wavy::cli {

using nlohmann::json;

namespace {

[[noreturn]] void reject(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

// Reads typed fields from one JSON object and remembers which keys were read,
// so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) reject(path_, "expected an object");
  }

  std::string at(std::string_view key) const { return path_ + "." + std::string(key); }
  bool has(std::string_view key) const { return j_->contains(std::string(key)); }

  const json* find(std::string_view key) {
    const std::string k(key);
    seen_.insert(k);
    const auto it = j_->find(k);
    return it == j_->end() ? nullptr : &*it;
  }

  template <class T>
  T require(std::string_view key) {
    if (!has(key)) reject(at(key), "required field is missing");
    T out{};
    read(key, out);
    return out;
  }

  void read(std::string_view key, std::size_t& out) {
    const json* v = find(key);
    if (!v) return;
    // Literals built in code are signed; text-parsed ones are unsigned.
    if (!v->is_number_integer() || v->get<long long>() < 0) reject(at(key), "expected a non-negative integer");
    out = v->get<std::size_t>();
  }
  void read(std::string_view key, int& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number_integer()) reject(at(key), "expected an integer");
    const long long value = v->get<long long>();
    if (value < std::numeric_limits<int>::min() || value > std::numeric_limits<int>::max()) {
      reject(at(key), "integer out of range");
    }
    out = static_cast<int>(value);
  }
  void read(std::string_view key, double& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_number()) reject(at(key), "expected a number");
    out = v->get<double>();
    if (!std::isfinite(out)) reject(at(key), "expected a finite number");
  }
  void read(std::string_view key, bool& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_boolean()) reject(at(key), "expected true or false");
    out = v->get<bool>();
  }
  void read(std::string_view key, std::string& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) reject(at(key), "expected a string");
    out = v->get<std::string>();
  }

  template <class E, class Parse>
  void read_enum(std::string_view key, E& out, Parse parse, std::string_view choices) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) reject(at(key), "expected one of " + std::string(choices));
    const auto parsed = parse(v->get<std::string>());
    if (!parsed) reject(at(key), "unknown value \"" + v->get<std::string>() + "\", expected one of " + std::string(choices));
    out = *parsed;
  }

  void finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!seen_.contains(it.key())) reject(at(it.key()), "unknown key");
    }
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& path, const std::string& message) {
  if (!ok) reject(path, message);
}

std::optional<LnPlacement> parse_placement(std::string_view s) {
  if (s == "post") return LnPlacement::kPost;
  if (s == "pre") return LnPlacement::kPre;
  return std::nullopt;
}
std::optional<GateShape> parse_gate(std::string_view s) {
  if (s == "scalar") return GateShape::kScalar;
  if (s == "vector") return GateShape::kVector;
  return std::nullopt;
}
std::optional<Activation> parse_activation(std::string_view s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "relu") return Activation::kRelu;
  return std::nullopt;
}
std::optional<PositionalKind> parse_positional(std::string_view s) {
  if (s == "learned") return PositionalKind::kLearned;
  if (s == "sinusoidal") return PositionalKind::kSinusoidal;
  return std::nullopt;
}
std::optional<ValueInit> parse_value_init(std::string_view s) {
  if (s == "gaussian") return ValueInit::kGaussian;
  if (s == "identity") return ValueInit::kIdentity;
  return std::nullopt;
}
std::optional<Mutation> parse_mutation(std::string_view s) {
  if (s == "none") return Mutation::kNone;
  if (s == "ffn_velocity_sign") return Mutation::kFfnVelocitySign;
  return std::nullopt;
}

constexpr std::string_view kVariants = "diffuse, wave, mix_output, mix_velocity";

struct ModelParse {
  ModelConfig cfg;
  std::uint64_t seed = 0;
  bool vocab_set = false;
  bool vocab_out_set = false;
  bool max_len_set = false;
};

ModelParse parse_model(const json& j) {
  Section s(j, "model");
  ModelParse out;
  ModelConfig& m = out.cfg;
  out.vocab_set = s.has("vocab");
  out.vocab_out_set = s.has("vocab_out");
  out.max_len_set = s.has("max_len");
  s.read("vocab", m.vocab);
  s.read("vocab_out", m.vocab_out);
  s.read("max_len", m.max_len);
  s.read("layers", m.layers);
  s.read("d_model", m.d_model);
  s.read("heads", m.heads);
  s.read("d_ff", m.d_ff);
  s.read_enum("ln_placement", m.ln_placement, parse_placement, "post, pre");
  s.read_enum("residual_variant", m.residual_variant, parse_variant, kVariants);
  s.read("tau", m.tau);
  s.read("theta_init", m.theta_init);
  s.read_enum("gate_shape", m.gate_shape, parse_gate, "scalar, vector");
  if (const json* w = s.find("wavy_layers")) {
    if (w->is_string() && w->get<std::string>() == "all") {
      m.wavy_layers = WavyLayers{};
    } else if (w->is_array() && w->size() == 2 && (*w)[0].is_number_unsigned() && (*w)[1].is_number_unsigned()) {
      m.wavy_layers = WavyLayers{false, (*w)[0].get<std::size_t>(), (*w)[1].get<std::size_t>()};
      check(m.wavy_layers.first <= m.wavy_layers.last, s.at("wavy_layers"), "range start exceeds its end");
    } else {
      reject(s.at("wavy_layers"), "expected \"all\" or [first, last]");
    }
  }
  s.read_enum("activation", m.activation, parse_activation, "gelu, relu");
  s.read_enum("positional", m.positional, parse_positional, "learned, sinusoidal");
  s.read("init_std", m.init_std);
  s.read("embed_std", m.embed_std);
  s.read_enum("value_init", m.value_init, parse_value_init, "gaussian, identity");
  s.read("ln_eps", m.ln_eps);
  s.read("seed", out.seed);
  s.finish();

  check(m.vocab >= 1, "model.vocab", "must be positive");
  check(m.vocab_out >= 1, "model.vocab_out", "must be positive");
  check(m.max_len >= 1, "model.max_len", "must be positive");
  check(m.layers >= 1, "model.layers", "must be positive");
  check(m.d_model >= 1, "model.d_model", "must be positive");
  check(m.heads >= 1, "model.heads", "must be positive");
  check(m.d_model % m.heads == 0, "model.heads", "must divide d_model");
  check(m.d_ff >= 1, "model.d_ff", "must be positive");
  check(m.tau > 0, "model.tau", "must be positive");
  check(m.init_std >= 0, "model.init_std", "must be non-negative");
  check(m.embed_std >= 0, "model.embed_std", "must be non-negative");
  check(m.ln_eps > 0, "model.ln_eps", "must be positive");
  check(m.wavy_layers.all || m.wavy_layers.last < m.layers, "model.wavy_layers", "range exceeds the layer count");
  return out;
}

DynamicsConfig parse_dynamics(const json& j) {
  Section s(j, "dynamics");
  DynamicsConfig d;
  s.read("n", d.n);
  s.read("d", d.d);
  d.steps = s.require<std::size_t>("steps");
  s.read("tau", d.tau);
  s.read_enum("variant", d.variant, parse_variant, kVariants);
  s.read("theta", d.theta);
  s.read("seed", d.seed);
  s.read("feature_std", d.feature_std);
  s.read("attention_std", d.attention_std);
  s.read("shared_qk", d.shared_qk);
  s.read("sinkhorn_tol", d.sinkhorn_tol);
  s.read("sinkhorn_max_iter", d.sinkhorn_max_iter);
  s.finish();
  check(d.n >= 2, "dynamics.n", "must be at least 2");
  check(d.d >= 1, "dynamics.d", "must be positive");
  check(d.tau > 0, "dynamics.tau", "must be positive");
  check(d.feature_std > 0, "dynamics.feature_std", "must be positive");
  check(d.attention_std >= 0, "dynamics.attention_std", "must be non-negative");
  check(d.sinkhorn_tol > 0 && d.sinkhorn_tol <= 1e-10, "dynamics.sinkhorn_tol", "must lie in (0, 1e-10]");
  check(d.sinkhorn_max_iter >= 1, "dynamics.sinkhorn_max_iter", "must be positive");
  return d;
}

EnergyConfig parse_energy(const json& j) {
  Section s(j, "energy");
  EnergyConfig e;
  s.read("diffusion_tau", e.diffusion_tau);
  s.read("diffusion_steps", e.diffusion_steps);
  s.read("wave_tau", e.wave_tau);
  s.read("wave_steps", e.wave_steps);
  s.read("violation_tol", e.violation_tol);
  s.read("cos_sim_gap", e.cos_sim_gap);
  s.read("band_limit", e.band_limit);
  s.read("slope_limit", e.slope_limit);
  s.read("ratio_min", e.ratio_min);
  s.read("ratio_max", e.ratio_max);
  s.finish();
  check(e.diffusion_tau > 0, "energy.diffusion_tau", "must be positive");
  check(e.wave_tau > 0, "energy.wave_tau", "must be positive");
  check(e.diffusion_steps >= 1, "energy.diffusion_steps", "must be positive");
  check(e.wave_steps >= 2, "energy.wave_steps", "must be at least 2");
  check(e.ratio_min <= e.ratio_max, "energy.ratio_min", "must not exceed ratio_max");
  return e;
}

ProbeConfig parse_probe(const json& j) {
  Section s(j, "probe");
  ProbeConfig p;
  s.read("sequences", p.sequences);
  s.read("seq_len", p.seq_len);
  s.read("seed", p.seed);
  s.read("decrease_margin", p.decrease_margin);
  s.finish();
  check(p.sequences >= 1, "probe.sequences", "must be positive");
  check(p.seq_len >= 2, "probe.seq_len", "must be at least 2");
  return p;
}

TrainSection parse_train(const json& j) {
  Section s(j, "train");
  TrainSection t;
  s.read_enum("task", t.task.kind, parse_task_kind, "majority_token, masked_copy");
  t.train.steps = s.require<std::size_t>("steps");
  s.read("batch", t.train.batch);
  s.read("lr", t.train.lr);
  s.read("weight_decay", t.train.weight_decay);
  s.read("warmup_frac", t.train.warmup_frac);
  s.read("seed", t.train.seed);
  s.read("eval_every", t.train.eval_every);
  s.read("val_sequences", t.train.val_sequences);
  s.read("beta1", t.train.adam.beta1);
  s.read("beta2", t.train.adam.beta2);
  s.read("adam_eps", t.train.adam.eps);
  s.read("vocab", t.task.vocab);
  s.read("seq_len", t.task.seq_len);
  s.read("mask_fraction", t.task.mask_fraction);
  s.read("majority_bias", t.task.majority_bias);
  s.read("task_seed", t.task.seed);
  s.finish();
  check(t.train.batch >= 1, "train.batch", "must be positive");
  check(t.train.lr > 0, "train.lr", "must be positive");
  check(t.train.weight_decay >= 0, "train.weight_decay", "must be non-negative");
  check(t.train.warmup_frac >= 0 && t.train.warmup_frac <= 1, "train.warmup_frac", "must lie in [0, 1]");
  check(t.train.eval_every >= 1, "train.eval_every", "must be positive");
  check(t.train.val_sequences >= 1, "train.val_sequences", "must be positive");
  check(t.task.vocab >= 2, "train.vocab", "must be at least 2");
  check(t.task.seq_len >= 2, "train.seq_len", "must be at least 2");
  check(t.task.mask_fraction > 0 && t.task.mask_fraction < 1, "train.mask_fraction", "must lie in (0, 1)");
  check(t.task.majority_bias >= 0 && t.task.majority_bias <= 1, "train.majority_bias", "must lie in [0, 1]");
  return t;
}

GradcheckConfig parse_gradcheck(const json& j) {
  Section s(j, "gradcheck");
  GradcheckConfig g;
  s.read("samples", g.samples);
  s.read("eps", g.eps);
  s.read("seed", g.seed);
  s.read("jvp_instances", g.jvp_instances);
  s.read("jvp_eps", g.jvp_eps);
  s.read("d", g.d);
  s.read("n", g.n);
  s.read("heads", g.heads);
  s.read("d_ff", g.d_ff);
  s.read("layers", g.layers);
  s.read("vocab", g.vocab);
  s.read("sequences", g.sequences);
  s.read("init_std", g.init_std);
  s.read("theta_init", g.theta_init);
  s.read_enum("activation", g.activation, parse_activation, "gelu, relu");
  s.read("relu_check", g.relu_check);
  s.read("ffn_tolerance", g.ffn_tolerance);
  s.read("ln_tolerance", g.ln_tolerance);
  s.read("model_tolerance", g.model_tolerance);
  s.read_enum("mutation", g.mutation, parse_mutation, "none, ffn_velocity_sign");
  s.finish();
  check(g.eps >= 1e-8 && g.eps <= 1e-4, "gradcheck.eps", "must lie in [1e-8, 1e-4]");
  check(g.jvp_eps > 0, "gradcheck.jvp_eps", "must be positive");
  check(g.samples >= 1, "gradcheck.samples", "must be positive");
  check(g.d >= 1 && g.heads >= 1 && g.d % g.heads == 0, "gradcheck.heads", "must divide gradcheck.d");
  check(g.n >= 2, "gradcheck.n", "must be at least 2");
  check(g.layers >= 1, "gradcheck.layers", "must be positive");
  check(g.vocab >= 2, "gradcheck.vocab", "must be at least 2");
  check(g.sequences >= 1, "gradcheck.sequences", "must be positive");
  check(g.d_ff >= 1, "gradcheck.d_ff", "must be positive");
  return g;
}

BlockcheckConfig parse_blockcheck(const json& j) {
  Section s(j, "blockcheck");
  BlockcheckConfig b;
  s.read("instances", b.instances);
  s.read("preln_instances", b.preln_instances);
  s.read("contraction_instances", b.contraction_instances);
  if (s.has("n")) b.n = s.require<std::size_t>("n");
  if (s.has("d")) b.d = s.require<std::size_t>("d");
  s.read("seed", b.seed);
  s.read("tolerance", b.tolerance);
  s.read("scheme_tolerance", b.scheme_tolerance);
  s.read("contraction_tolerance", b.contraction_tolerance);
  if (const json* t = s.find("taus")) {
    if (!t->is_array() || t->empty()) reject(s.at("taus"), "expected a non-empty array of numbers");
    b.taus.clear();
    for (const auto& v : *t) {
      if (!v.is_number() || !(v.get<double>() > 0)) reject(s.at("taus"), "entries must be positive numbers");
      b.taus.push_back(v.get<double>());
    }
  }
  s.finish();
  check(!b.n || *b.n >= 1, "blockcheck.n", "must be positive");
  check(!b.d || *b.d >= 2, "blockcheck.d", "must be at least 2");
  return b;
}

std::string locate(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte > 0 ? byte - 1 : 0, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

// Published large-scale hyperparameters. Desk-scale runs override most of them.
json nlp_model() {
  return {{"ln_placement", "post"}, {"layers", 24},          {"d_model", 256},
          {"heads", 4},             {"d_ff", 1024},          {"residual_variant", "mix_velocity"},
          {"tau", 0.5},             {"theta_init", 0.0},     {"gate_shape", "scalar"},
          {"vocab", 30000},         {"vocab_out", 30000},    {"max_len", 128}};
}

}  // namespace

std::vector<std::string> preset_names() { return {"nlp-pretrain", "glue", "squad", "cv-deit"}; }

json preset(std::string_view name) {
  if (name == "nlp-pretrain") {
    return {{"model", nlp_model()},
            {"train",
             {{"steps", 10000}, {"batch", 64}, {"lr", 5e-5}, {"warmup_frac", 0.1}, {"eval_every", 5000}}}};
  }
  if (name == "glue" || name == "squad") {
    return {{"model", nlp_model()},
            {"train",
             {{"batch", name == "glue" ? 32 : 16}, {"lr", 5e-5}, {"weight_decay", 0.01}, {"warmup_frac", 0.1}}}};
  }
  if (name == "cv-deit") {
    return {{"model",
             {{"ln_placement", "pre"},
              {"layers", 12},
              {"residual_variant", "mix_output"},
              {"tau", 0.5},
              {"theta_init", 0.0},
              {"gate_shape", "vector"}}}};
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("--preset: unknown preset \"" + std::string(name) + "\", expected one of " + known);
}

ExperimentConfig parse_config(std::string_view text, std::string_view preset_name) {
  json user;
  try {
    user = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + locate(text, e.byte) + ": invalid JSON (" + e.what() + ")");
  }
  if (!user.is_object()) throw ConfigError("config: top level must be an object");

  json doc = preset_name.empty() ? json::object() : preset(preset_name);
  doc.merge_patch(user);

  Section root(doc, "config");
  const json* version = root.find("schema_version");
  if (!version) reject("schema_version", "required field is missing");
  if (!version->is_number_integer() || version->get<long long>() != kSchemaVersion) {
    reject("schema_version", "unsupported version, expected " + std::to_string(kSchemaVersion));
  }

  ExperimentConfig cfg;
  ModelParse model;
  if (const json* j = root.find("model")) {
    model = parse_model(*j);
    cfg.model = model.cfg;
    cfg.model_seed = model.seed;
  }
  if (const json* j = root.find("dynamics")) cfg.dynamics = parse_dynamics(*j);
  if (const json* j = root.find("energy")) cfg.energy = parse_energy(*j);
  if (const json* j = root.find("probe")) cfg.probe = parse_probe(*j);
  if (const json* j = root.find("train")) cfg.train = parse_train(*j);
  if (const json* j = root.find("gradcheck")) cfg.gradcheck = parse_gradcheck(*j);
  if (const json* j = root.find("blockcheck")) cfg.blockcheck = parse_blockcheck(*j);
  if (const json* j = root.find("output")) {
    Section s(*j, "output");
    s.read("dir", cfg.output_dir);
    s.finish();
    check(!cfg.output_dir.empty(), "output.dir", "must not be empty");
  }
  root.finish();

  // The model's vocabulary and length follow the task unless set explicitly.
  if (cfg.train) {
    ModelConfig m = cfg.model.value_or(ModelConfig{});
    const TaskSpec& task = cfg.train->task;
    if (!model.vocab_set) m.vocab = task.input_vocab();
    if (!model.vocab_out_set) m.vocab_out = task.output_vocab();
    if (!model.max_len_set) m.max_len = task.seq_len;
    check(m.vocab >= task.input_vocab(), "model.vocab", "smaller than the task's input vocabulary");
    check(m.vocab_out >= task.output_vocab(), "model.vocab_out", "smaller than the task's output vocabulary");
    check(m.max_len >= task.seq_len, "model.max_len", "shorter than train.seq_len");
    cfg.model = m;
  }
  cfg.document = std::move(doc);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, std::string_view preset_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), preset_name);
}

}  // namespace wavy::cli
