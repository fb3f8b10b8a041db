#include "wavy/diagnostics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace wavy {

double cosine_similarity(const Matrix& x) {
  const std::size_t n = x.rows();
  if (n < 2) fail(ErrorCode::kInvalidArgument, "cosine similarity needs at least two rows");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (!(norms[i] >= 1e-300)) fail(ErrorCode::kZeroRow, "row " + std::to_string(i) + " has zero norm");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto xj = x.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) dot += xi[k] * xj[k];
      total += dot / (norms[i] * norms[j]);
    }
  }
  return total / static_cast<double>(n * (n - 1));
}

Matrix attention_weighted_mean(const Matrix& x, const AttentionMatrix& a) {
  if (a.size() != x.rows()) fail(ErrorCode::kShapeMismatch, "attention size differs from token count");
  return matmul(a.matrix(), x);
}

PotentialEnergyForms potential_energy_forms(const Matrix& x, const AttentionMatrix& a_sym) {
  const std::size_t n = x.rows();
  if (a_sym.size() != n) fail(ErrorCode::kShapeMismatch, "attention size differs from token count");
  if (!a_sym.is_symmetric(kSymmetryTolerance)) {
    fail(ErrorCode::kAsymmetricInput, "energy diagnostics need a symmetric attention matrix");
  }
  const Matrix& a = a_sym.matrix();

  const Matrix mean = column_means(x);
  Matrix xc = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) xc(i, k) -= mean(0, k);
  const Matrix gram = matmul_nt(xc, xc);
  double quadratic = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) quadratic += ((i == j ? 1.0 : 0.0) - a(i, j)) * gram(i, j);
  quadratic *= 0.5;

  double pairwise = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (a(i, j) == 0.0) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double diff = x(j, k) - x(i, k);
        d2 += diff * diff;
      }
      pairwise += a(i, j) * d2;
    }
  }
  pairwise *= 0.25;
  return {quadratic, pairwise};
}

double potential_energy(const Matrix& x, const AttentionMatrix& a_sym) {
  const auto [quadratic, pairwise] = potential_energy_forms(x, a_sym);
  // Both forms difference O(|X|) entries, so near consensus each carries an
  // absolute rounding error of order eps * |X|_max * sqrt(n d U).
  const double scale = static_cast<double>(x.size()) * std::abs(pairwise);
  const double tol = 1e-10 * std::max(std::abs(quadratic), std::abs(pairwise)) +
                     1e-12 * max_abs(x) * std::sqrt(scale);
  if (!(std::abs(quadratic - pairwise) <= tol)) {
    fail(ErrorCode::kFormMismatch, "potential energy forms disagree: " + format_double(quadratic) + " vs " +
                                       format_double(pairwise));
  }
  return pairwise;
}

double wave_energy(const Matrix& x, const Matrix& y, const AttentionMatrix& a_sym) {
  require_same_shape(x, y, "wave_energy");
  double kinetic = 0.0;
  for (double v : y.data()) kinetic += v * v;
  return 0.5 * kinetic + potential_energy(x, a_sym);
}

double deviation_contraction_residual(const Matrix& x_next, const Matrix& x, const AttentionMatrix& a,
                                      double tau) {
  require_same_shape(x_next, x, "deviation_contraction_residual");
  const Matrix ax = attention_weighted_mean(x, a);
  return max_abs((x_next - ax) - (1.0 - tau) * (x - ax));
}

double deviation_norm(const Matrix& x, const AttentionMatrix& a) {
  return frobenius_norm(x - attention_weighted_mean(x, a));
}

void Trace::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0 && r.step <= records[i - 1].step) {
      fail(ErrorCode::kInvalidArgument, "trace steps must increase");
    }
    const bool finite = std::isfinite(r.cos_sim) && std::isfinite(r.potential_energy) &&
                        std::isfinite(r.deviation_norm) && std::isfinite(r.max_abs) &&
                        (!r.wave_energy || std::isfinite(*r.wave_energy));
    if (!finite) fail(ErrorCode::kNonFinite, "trace record " + std::to_string(r.step) + " is not finite");
  }
}

Trace record_trace(const std::vector<DynamicsState>& rollout, const AttentionMatrix& a_sym) {
  Trace t;
  t.records.reserve(rollout.size());
  for (std::size_t k = 0; k < rollout.size(); ++k) {
    const auto& s = rollout[k];
    TraceRecord r;
    r.step = k;
    r.cos_sim = cosine_similarity(s.x);
    r.potential_energy = potential_energy(s.x, a_sym);
    r.wave_energy = wave_energy(s.x, s.y, a_sym);
    r.deviation_norm = deviation_norm(s.x, a_sym);
    r.max_abs = max_abs(s.x);
    t.records.push_back(r);
  }
  t.validate();
  return t;
}

Trace record_trace(const std::vector<Matrix>& layer_states) {
  Trace t;
  t.records.reserve(layer_states.size());
  for (std::size_t k = 0; k < layer_states.size(); ++k) {
    const Matrix& x = layer_states[k];
    const auto uniform = AttentionMatrix::uniform(x.rows());
    TraceRecord r;
    r.step = k;
    r.cos_sim = cosine_similarity(x);
    r.potential_energy = potential_energy(x, uniform);
    r.deviation_norm = deviation_norm(x, uniform);
    r.max_abs = max_abs(x);
    t.records.push_back(r);
  }
  t.validate();
  return t;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string emit_csv(const Trace& trace) {
  std::string out(kTraceCsvHeader);
  out += '\n';
  for (const auto& r : trace.records) {
    out += std::to_string(r.step);
    for (const std::optional<double>& v : {std::optional<double>(r.cos_sim),
                                           std::optional<double>(r.potential_energy), r.wave_energy,
                                           std::optional<double>(r.deviation_norm),
                                           std::optional<double>(r.max_abs)}) {
      out += ',';
      if (v) out += format_double(*v);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot open " + path + " for writing");
  const std::string csv = emit_csv(trace);
  out.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  if (!out) fail(ErrorCode::kIoError, "write failed for " + path);
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return parts;
    start = pos + 1;
  }
}

template <class T>
T parse_number(std::string_view field, std::size_t line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    fail(ErrorCode::kIoError, "bad number '" + std::string(field) + "' on trace line " + std::to_string(line));
  }
  return v;
}

}  // namespace

Trace parse_trace_csv(std::string_view csv) {
  auto lines = split(csv, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.front() != kTraceCsvHeader) fail(ErrorCode::kIoError, "missing trace header");
  Trace t;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 6) fail(ErrorCode::kIoError, "trace line " + std::to_string(i + 1) + " needs 6 fields");
    TraceRecord r;
    r.step = parse_number<std::size_t>(f[0], i + 1);
    r.cos_sim = parse_number<double>(f[1], i + 1);
    r.potential_energy = parse_number<double>(f[2], i + 1);
    if (!f[3].empty()) r.wave_energy = parse_number<double>(f[3], i + 1);
    r.deviation_norm = parse_number<double>(f[4], i + 1);
    r.max_abs = parse_number<double>(f[5], i + 1);
    t.records.push_back(r);
  }
  return t;
}

}  // namespace wavy
