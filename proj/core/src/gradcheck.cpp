#include "wavy/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

namespace wavy {

double relative_error(double analytic, double numeric) noexcept {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
  double loss;
  std::vector<Matrix> relu_inputs;
};

Evaluation evaluate(const LossBuilder& loss) {
  Tape tape;
  TapeOps ops(tape);
  const Var l = loss(ops);
  const Matrix& v = tape.value(l);
  if (v.rows() != 1 || v.cols() != 1) fail(ErrorCode::kShapeMismatch, "grad_check loss must be scalar");
  return {v(0, 0), ops.relu_inputs()};
}

bool crosses_kink(const std::vector<Matrix>& base, const std::vector<Matrix>& moved, double band) {
  if (base.size() != moved.size()) return true;
  for (std::size_t k = 0; k < base.size(); ++k) {
    const auto b = base[k].data();
    const auto m = moved[k].data();
    if (b.size() != m.size()) return true;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (std::abs(b[i]) <= band && (b[i] > 0) != (m[i] > 0)) return true;
    }
  }
  return false;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, std::span<const ParamRef> params,
                           const GradCheckOptions& opts) {
  if (!(opts.eps >= 1e-8 && opts.eps <= 1e-4)) {
    fail(ErrorCode::kInvalidArgument, "grad_check eps must lie in [1e-8, 1e-4]");
  }
  std::size_t total = 0;
  for (const auto& p : params) total += p.value->size();
  if (total == 0) fail(ErrorCode::kInvalidArgument, "grad_check has no parameters");

  // Analytic gradients from one pass.
  std::vector<Matrix> grads;
  std::vector<Matrix> base_relu;
  {
    Tape tape;
    TapeOps ops(tape);
    const Var l = loss(ops);
    tape.backward(l);
    for (const auto& p : params) grads.push_back(ops.param_grad(*p.value));
    base_relu = ops.relu_inputs();
  }

  const auto locate = [&](std::size_t flat) {
    std::size_t k = 0;
    while (flat >= params[k].value->size()) flat -= params[k++].value->size();
    return std::pair{k, flat};
  };

  GradCheckReport report;
  const auto check = [&](std::size_t k, std::size_t idx) {
    double& slot = params[k].value->data()[idx];
    const double saved = slot;
    slot = saved + opts.eps;
    const Evaluation plus = evaluate(loss);
    slot = saved - opts.eps;
    const Evaluation minus = evaluate(loss);
    slot = saved;

    GradCheckSample s;
    s.param = params[k].name;
    s.index = idx;
    s.analytic = grads[k].data()[idx];
    s.numeric = (plus.loss - minus.loss) / (2.0 * opts.eps);
    s.excluded = crosses_kink(base_relu, plus.relu_inputs, opts.kink_band) ||
                 crosses_kink(base_relu, minus.relu_inputs, opts.kink_band);
    s.rel_error = relative_error(s.analytic, s.numeric);
    if (s.excluded) {
      ++report.excluded;
    } else {
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, s.rel_error);
    }
    report.samples.push_back(s);
    return !s.excluded;
  };

  Prng prng(opts.seed);
  std::set<std::size_t> seen;
  std::size_t accepted = 0;
  const std::size_t max_draws = opts.samples * std::max<std::size_t>(opts.max_draw_factor, 1);
  for (std::size_t draw = 0; accepted < opts.samples && draw < max_draws && seen.size() < total; ++draw) {
    const std::size_t flat = prng.uniform_index(total);
    if (!seen.insert(flat).second) continue;
    const auto [k, idx] = locate(flat);
    if (check(k, idx)) ++accepted;
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const bool forced = std::any_of(opts.force_params.begin(), opts.force_params.end(),
                                    [&](const std::string& s) { return params[k].name.find(s) != std::string::npos; });
    if (forced) check(k, prng.uniform_index(params[k].value->size()));
  }
  return report;
}

}  // namespace wavy
