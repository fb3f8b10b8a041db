#include "wavy/blocks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wavy/eager_ops.hpp"
#include "wavy/flows.hpp"

namespace wavy {

std::string_view to_string(LnPlacement p) { return p == LnPlacement::kPost ? "post" : "pre"; }

namespace {

void require_row(const Matrix& m, std::size_t cols, const char* what) {
  if (m.rows() != 1 || m.cols() != cols) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + " must be 1x" + std::to_string(cols) + ", got " +
                                        m.shape_string());
  }
}

void require_ln(const LayerNormParams& ln, std::size_t d, const char* what) {
  require_row(ln.gamma, d, what);
  require_row(ln.beta, d, what);
  if (!(ln.eps >= 0)) fail(ErrorCode::kInvalidArgument, std::string(what) + " eps must be nonnegative");
}

}  // namespace

void BlockParams::validate() const {
  attn.validate();
  const std::size_t d = dim();
  require_ln(ln1, d, "ln1");
  require_ln(ln2, d, "ln2");
  ffn.validate();
  if (ffn.model_dim() != d) fail(ErrorCode::kShapeMismatch, "ffn width differs from attention width");
  // tau = 0 is a legal degenerate block (attention update suppressed).
  if (!(step.tau >= 0)) fail(ErrorCode::kInvalidArgument, "tau must be nonnegative");
  if (step.theta.rows() != 1 || (step.theta.cols() != 1 && step.theta.cols() != d)) {
    fail(ErrorCode::kShapeMismatch, "gate theta must be 1x1 or 1x" + std::to_string(d));
  }
}

void ModelParams::validate() const {
  const std::size_t d = dim();
  if (d == 0 || vocab() == 0) fail(ErrorCode::kShapeMismatch, "empty embedding table");
  if (positional.cols() != d || positional.rows() == 0) {
    fail(ErrorCode::kShapeMismatch, "positional table " + positional.shape_string() + " for width " +
                                        std::to_string(d));
  }
  if (head.rows() != d || head.cols() == 0) {
    fail(ErrorCode::kShapeMismatch, "output head " + head.shape_string() + " for width " + std::to_string(d));
  }
  require_ln(final_ln, d, "final_ln");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (layers[l].dim() != d) {
      fail(ErrorCode::kShapeMismatch, "layer " + std::to_string(l) + " width differs from the embedding");
    }
  }
}

std::vector<ParamRef> ModelParams::parameters() {
  std::vector<ParamRef> out;
  out.push_back({&embedding, "embedding", true});
  if (positional_kind == PositionalKind::kLearned) out.push_back({&positional, "positional", true});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& b = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < b.attn.heads(); ++h) {
      const std::string hs = std::to_string(h);
      out.push_back({&b.attn.wq[h], p + "attn.wq." + hs, true});
      out.push_back({&b.attn.wk[h], p + "attn.wk." + hs, true});
      out.push_back({&b.attn.wv[h], p + "attn.wv." + hs, true});
    }
    out.push_back({&b.attn.wo, p + "attn.wo", true});
    out.push_back({&b.ln1.gamma, p + "ln1.gamma", false});
    out.push_back({&b.ln1.beta, p + "ln1.beta", false});
    out.push_back({&b.ln2.gamma, p + "ln2.gamma", false});
    out.push_back({&b.ln2.beta, p + "ln2.beta", false});
    out.push_back({&b.ffn.w1, p + "ffn.w1", true});
    out.push_back({&b.ffn.b1, p + "ffn.b1", false});
    out.push_back({&b.ffn.w2, p + "ffn.w2", true});
    out.push_back({&b.ffn.b2, p + "ffn.b2", false});
    const bool gated = b.step.variant == Variant::kMixOutput || b.step.variant == Variant::kMixVelocity;
    if (b.wavy && gated) out.push_back({&b.step.theta, p + "theta", false});
  }
  if (ln_placement == LnPlacement::kPre) {
    out.push_back({&final_ln.gamma, "final_ln.gamma", false});
    out.push_back({&final_ln.beta, "final_ln.beta", false});
  }
  out.push_back({&head, "head", true});
  return out;
}

std::optional<double> ModelParams::lambda_mean() const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& b : layers) {
    const bool gated = b.step.variant == Variant::kMixOutput || b.step.variant == Variant::kMixVelocity;
    if (!b.wavy || !gated) continue;
    const Matrix lam = b.step.lambda();
    total += sum(lam) / static_cast<double>(lam.size());
    ++count;
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

Matrix sinusoidal_positions(std::size_t max_len, std::size_t d) {
  Matrix pe(max_len, d);
  for (std::size_t p = 0; p < max_len; ++p) {
    for (std::size_t j = 0; j < d; ++j) {
      const double pair = static_cast<double>(j - j % 2);
      const double angle = static_cast<double>(p) / std::pow(10000.0, pair / static_cast<double>(d));
      pe(p, j) = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.vocab == 0 || cfg.vocab_out == 0 || cfg.max_len == 0 || cfg.d_model == 0 || cfg.d_ff == 0) {
    fail(ErrorCode::kInvalidArgument, "model dimensions must be positive");
  }
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
    fail(ErrorCode::kInvalidArgument, "d_model must be a multiple of heads");
  }
  if (!(cfg.tau > 0)) fail(ErrorCode::kInvalidArgument, "tau must be positive");
  const std::size_t d = cfg.d_model;
  Prng prng(seed);
  ModelParams m;
  m.ln_placement = cfg.ln_placement;
  m.positional_kind = cfg.positional;
  m.embedding = gaussian_init(prng, cfg.vocab, d, cfg.embed_std);
  m.positional = cfg.positional == PositionalKind::kLearned ? gaussian_init(prng, cfg.max_len, d, cfg.init_std)
                                                            : sinusoidal_positions(cfg.max_len, d);
  const std::size_t dh = d / cfg.heads;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    BlockParams b;
    b.attn = AttentionParams::random(d, cfg.heads, prng, cfg.init_std);
    if (cfg.value_init == ValueInit::kIdentity) {
      // Head h reads feature slice h; the output projection reassembles them.
      const Matrix eye = Matrix::identity(d);
      for (std::size_t h = 0; h < cfg.heads; ++h) b.attn.wv[h] = slice_cols(eye, h * dh, dh);
      b.attn.wo = eye;
    }
    b.ln1 = LayerNormParams::identity(d, cfg.ln_eps);
    b.ln2 = LayerNormParams::identity(d, cfg.ln_eps);
    b.ffn.w1 = gaussian_init(prng, d, cfg.d_ff, cfg.init_std);
    b.ffn.b1 = Matrix(1, cfg.d_ff);
    b.ffn.w2 = gaussian_init(prng, cfg.d_ff, d, cfg.init_std);
    b.ffn.b2 = Matrix(1, d);
    b.ffn.activation = cfg.activation;
    b.step.tau = cfg.tau;
    b.step.variant = cfg.residual_variant;
    b.step.theta = Matrix(1, cfg.gate_shape == GateShape::kScalar ? 1 : d, cfg.theta_init);
    b.wavy = cfg.residual_variant != Variant::kDiffuse && cfg.wavy_layers.contains(l);
    m.layers.push_back(std::move(b));
  }
  m.final_ln = LayerNormParams::identity(d, cfg.ln_eps);
  m.head = gaussian_init(prng, d, cfg.vocab_out, cfg.init_std);
  return m;
}

namespace {

void require_block_input(const Matrix& x, const BlockParams& p) {
  p.validate();
  if (x.cols() != p.dim() || x.rows() == 0) {
    fail(ErrorCode::kShapeMismatch, "block input " + x.shape_string() + " for width " + std::to_string(p.dim()));
  }
  require_finite(x, "block input");
}

StatePair checked(flows::Pair<EagerOps> out) {
  require_finite(out.x, "block state output");
  require_finite(out.y, "block velocity output");
  return {std::move(out.x), std::move(out.y)};
}

}  // namespace

Matrix post_ln_block(const Matrix& x, const BlockParams& p) {
  require_block_input(x, p);
  EagerOps ops;
  Matrix out = flows::post_ln_block(ops, x, p, 0);
  require_finite(out, "block output");
  return out;
}

Matrix pre_ln_block(const Matrix& x, const BlockParams& p) {
  require_block_input(x, p);
  EagerOps ops;
  Matrix out = flows::pre_ln_block(ops, x, p, 0);
  require_finite(out, "block output");
  return out;
}

StatePair post_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p) {
  require_block_input(x, p);
  require_same_shape(x, y, "block state/velocity");
  EagerOps ops;
  return checked(flows::post_ln_wavy_block(ops, x, y, p, 0));
}

StatePair pre_ln_wavy_block(const Matrix& x, const Matrix& y, const BlockParams& p) {
  require_block_input(x, p);
  require_same_shape(x, y, "block state/velocity");
  EagerOps ops;
  return checked(flows::pre_ln_wavy_block(ops, x, y, p, 0));
}

ModelOutput model_forward(std::span<const int> tokens, const ModelParams& m) {
  return model_forward(tokens, tokens.size(), m);
}

ModelOutput model_forward(std::span<const int> tokens, std::size_t seq_len, const ModelParams& m) {
  m.validate();
  EagerOps ops;
  auto f = flows::model_forward(ops, tokens, seq_len, m);
  require_finite(f.logits, "logits");
  return {std::move(f.logits), std::move(f.layer_states), std::move(f.x_final), std::move(f.y_final)};
}

DiffusionReactionReport preln_diffusion_reaction_check(const Matrix& x, const BlockParams& p, double tol) {
  require_block_input(x, p);
  if (p.attn.heads() != 1) fail(ErrorCode::kInvalidArgument, "diffusion-reaction check needs one head");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const LayerNormParams& ln = p.ln1;

  const Matrix x_ln = layer_norm(x, ln);
  const Matrix lhs = multi_head_attention(x_ln, p.attn) + x;

  Matrix sigma_inv(n, n);
  Matrix m_src(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [mean, var] = row_stats(x.row(i));
    const double s = std::sqrt(var + ln.eps);
    sigma_inv(i, i) = 1.0 / s;
    for (std::size_t j = 0; j < d; ++j) m_src(i, j) = -(mean / s) * ln.gamma(0, j) + ln.beta(0, j);
  }
  Matrix s_diag(d, d);
  for (std::size_t j = 0; j < d; ++j) s_diag(j, j) = ln.gamma(0, j);

  const Matrix a = attention_matrix(x_ln, p.attn, 0).matrix();
  const Matrix diffusion = matmul(a, matmul(matmul(sigma_inv, x), s_diag));
  const Matrix source = matmul(a, m_src);
  const Matrix rhs = matmul(matmul(diffusion + source, p.attn.wv[0]), p.attn.wo) + x;

  const double err = max_abs_diff(lhs, rhs);
  return {err, err <= tol};
}

// ---- binary format ----

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  void tensor(const Matrix& m) {
    for (double v : m.data()) f64(v);
  }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : b_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  Matrix tensor(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = f64();
    return m;
  }
  void expect_magic() {
    need(4);
    if (std::memcmp(b_.data(), "WVTF", 4) != 0) fail(ErrorCode::kIoError, "bad model file magic");
    pos_ += 4;
  }
  void expect_end() const {
    if (pos_ != b_.size()) fail(ErrorCode::kIoError, "trailing bytes after model tensors");
  }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail(ErrorCode::kIoError, "model file truncated");
  }
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

template <class E>
E enum_from(std::uint32_t v, std::uint32_t count, const char* what) {
  if (v >= count) fail(ErrorCode::kIoError, std::string("bad ") + what + " code in model file");
  return static_cast<E>(v);
}

}  // namespace

std::vector<unsigned char> serialize_model(const ModelParams& m) {
  m.validate();
  const auto& first = m.layers.empty() ? nullptr : &m.layers.front();
  const std::size_t heads = first ? first->attn.heads() : 1;
  const std::size_t d_ff = first ? first->ffn.hidden_dim() : 0;
  for (const auto& b : m.layers) {
    if (b.attn.heads() != heads || b.ffn.hidden_dim() != d_ff || b.attn.key_dim() * heads != m.dim() ||
        b.attn.value_dim() * heads != m.dim()) {
      fail(ErrorCode::kShapeMismatch, "serialization needs uniform layer shapes with d_k = d_h = d / H");
    }
  }
  Writer w;
  w.raw("WVTF");
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.layers.size()));
  for (std::size_t v : {m.vocab(), m.vocab_out(), m.max_len(), m.dim(), heads, d_ff}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(m.ln_placement));
  w.u32(static_cast<std::uint32_t>(m.positional_kind));
  w.f64(m.final_ln.eps);
  for (const auto& b : m.layers) {
    w.u32(b.wavy ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(b.step.variant));
    w.u32(static_cast<std::uint32_t>(b.ffn.activation));
    w.u32(static_cast<std::uint32_t>(b.step.theta.cols()));
    w.f64(b.step.tau);
    w.f64(b.ln1.eps);
    w.f64(b.ln2.eps);
  }
  w.tensor(m.embedding);
  w.tensor(m.positional);
  for (const auto& b : m.layers) {
    for (const auto& t : b.attn.wq) w.tensor(t);
    for (const auto& t : b.attn.wk) w.tensor(t);
    for (const auto& t : b.attn.wv) w.tensor(t);
    w.tensor(b.attn.wo);
    for (const Matrix* t : {&b.ln1.gamma, &b.ln1.beta, &b.ln2.gamma, &b.ln2.beta, &b.ffn.w1, &b.ffn.b1,
                            &b.ffn.w2, &b.ffn.b2, &b.step.theta}) {
      w.tensor(*t);
    }
  }
  w.tensor(m.final_ln.gamma);
  w.tensor(m.final_ln.beta);
  w.tensor(m.head);
  return w.take();
}

ModelParams deserialize_model(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    fail(ErrorCode::kIoError, "unsupported model format version " + std::to_string(version));
  }
  const std::size_t layers = r.u32();
  const std::size_t vocab = r.u32();
  const std::size_t vocab_out = r.u32();
  const std::size_t max_len = r.u32();
  const std::size_t d = r.u32();
  const std::size_t heads = r.u32();
  const std::size_t d_ff = r.u32();
  if (d == 0 || heads == 0 || d % heads != 0) fail(ErrorCode::kIoError, "inconsistent head layout");

  ModelParams m;
  m.ln_placement = enum_from<LnPlacement>(r.u32(), 2, "ln_placement");
  m.positional_kind = enum_from<PositionalKind>(r.u32(), 2, "positional");
  m.final_ln.eps = r.f64();
  m.layers.resize(layers);
  for (auto& b : m.layers) {
    b.wavy = r.u32() != 0;
    b.step.variant = enum_from<Variant>(r.u32(), 4, "variant");
    b.ffn.activation = enum_from<Activation>(r.u32(), 2, "activation");
    const std::size_t gate_len = r.u32();
    if (gate_len != 1 && gate_len != d) fail(ErrorCode::kIoError, "bad gate length");
    b.step.theta = Matrix(1, gate_len);
    b.step.tau = r.f64();
    b.ln1.eps = r.f64();
    b.ln2.eps = r.f64();
  }
  const std::size_t dh = d / heads;
  m.embedding = r.tensor(vocab, d);
  m.positional = r.tensor(max_len, d);
  for (auto& b : m.layers) {
    for (auto* group : {&b.attn.wq, &b.attn.wk, &b.attn.wv}) {
      for (std::size_t h = 0; h < heads; ++h) group->push_back(r.tensor(d, dh));
    }
    b.attn.wo = r.tensor(d, d);
    b.ln1.gamma = r.tensor(1, d);
    b.ln1.beta = r.tensor(1, d);
    b.ln2.gamma = r.tensor(1, d);
    b.ln2.beta = r.tensor(1, d);
    b.ffn.w1 = r.tensor(d, d_ff);
    b.ffn.b1 = r.tensor(1, d_ff);
    b.ffn.w2 = r.tensor(d_ff, d);
    b.ffn.b2 = r.tensor(1, d);
    b.step.theta = r.tensor(1, b.step.theta.cols());
  }
  m.final_ln.gamma = r.tensor(1, d);
  m.final_ln.beta = r.tensor(1, d);
  m.head = r.tensor(d, vocab_out);
  r.expect_end();
  m.validate();
  return m;
}

void save_model(const ModelParams& m, const std::string& path) {
  const auto bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoError, "write failed for " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace wavy
