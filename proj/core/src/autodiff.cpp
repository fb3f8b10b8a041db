#include "wavy/autodiff.hpp"

#include <cmath>
#include <string>

namespace wavy {

Var Tape::leaf(Matrix value, std::string_view op) { return push(op, {}, std::move(value), {}); }

Var Tape::push(std::string_view op, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  for (std::size_t in : inputs) {
    if (in >= id) fail(ErrorCode::kGraphCycle, "node input does not precede its consumer");
  }
  nodes_.push_back({op, std::move(inputs), std::move(value), std::move(backward)});
  return {id};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Matrix& slot = grads_.at(id);
  if (slot.empty()) {
    slot = g;
  } else {
    slot += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) fail(ErrorCode::kInvalidArgument, "loss node is not on this tape");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    fail(ErrorCode::kShapeMismatch, "backward needs a scalar loss, got " + lv.shape_string());
  }
  grads_.assign(nodes_.size(), Matrix());
  grads_[loss.id] = Matrix(1, 1, 1.0);
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    for (std::size_t in : n.inputs) {
      if (in >= k) fail(ErrorCode::kGraphCycle, "tape is not topologically ordered at node " + std::to_string(k));
    }
    if (grads_[k].empty() || !n.backward) continue;
    n.backward(*this, k);
  }
}

Matrix Tape::grad(Var v) const {
  if (has_grad(v.id)) return grads_[v.id];
  const Matrix& val = nodes_.at(v.id).value;
  return Matrix(val.rows(), val.cols());
}

// ---- TapeOps ----

namespace {

const Matrix& in_value(const Tape& t, std::size_t self, std::size_t k) {
  return t.node(t.node(self).inputs[k]).value;
}

std::size_t in_id(const Tape& t, std::size_t self, std::size_t k) { return t.node(self).inputs[k]; }

Matrix column_sums(const Matrix& g) {
  Matrix out(1, g.cols());
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) out(0, j) += g(i, j);
  return out;
}

Matrix map(const Matrix& z, const auto& fn) {
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) out.data()[i] = fn(z.data()[i]);
  return out;
}

}  // namespace

Var TapeOps::param(const Matrix& m) {
  if (auto it = params_.find(&m); it != params_.end()) return {it->second};
  const Var v = tape_->leaf(m, "param");
  params_.emplace(&m, v.id);
  return v;
}

Var TapeOps::constant(const Matrix& m) { return tape_->leaf(m, "constant"); }

Var TapeOps::zeros(std::size_t rows, std::size_t cols) { return tape_->leaf(Matrix(rows, cols), "constant"); }

Var TapeOps::add(Var a, Var b) {
  return tape_->push("add", {a.id, b.id}, value(a) + value(b), [](Tape& t, std::size_t s) {
    t.accumulate(in_id(t, s, 0), t.upstream(s));
    t.accumulate(in_id(t, s, 1), t.upstream(s));
  });
}

Var TapeOps::sub(Var a, Var b) {
  return tape_->push("sub", {a.id, b.id}, value(a) - value(b), [](Tape& t, std::size_t s) {
    t.accumulate(in_id(t, s, 0), t.upstream(s));
    t.accumulate(in_id(t, s, 1), -1.0 * t.upstream(s));
  });
}

Var TapeOps::scale(Var a, double k) {
  return tape_->push("scale", {a.id}, k * value(a), [k](Tape& t, std::size_t s) {
    t.accumulate(in_id(t, s, 0), k * t.upstream(s));
  });
}

Var TapeOps::affine(Var a, double k, double c) {
  return tape_->push("affine", {a.id}, wavy::affine(value(a), k, c), [k](Tape& t, std::size_t s) {
    t.accumulate(in_id(t, s, 0), k * t.upstream(s));
  });
}

Var TapeOps::hadamard(Var a, Var b) {
  return tape_->push("hadamard", {a.id, b.id}, wavy::hadamard(value(a), value(b)), [](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    t.accumulate(in_id(t, s, 0), wavy::hadamard(g, in_value(t, s, 1)));
    t.accumulate(in_id(t, s, 1), wavy::hadamard(g, in_value(t, s, 0)));
  });
}

Var TapeOps::matmul(Var a, Var b) {
  return tape_->push("matmul", {a.id, b.id}, wavy::matmul(value(a), value(b)), [](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    t.accumulate(in_id(t, s, 0), wavy::matmul_nt(g, in_value(t, s, 1)));
    t.accumulate(in_id(t, s, 1), wavy::matmul_tn(in_value(t, s, 0), g));
  });
}

Var TapeOps::matmul_nt(Var a, Var b) {
  return tape_->push("matmul_nt", {a.id, b.id}, wavy::matmul_nt(value(a), value(b)),
                     [](Tape& t, std::size_t s) {
                       const Matrix& g = t.upstream(s);
                       t.accumulate(in_id(t, s, 0), wavy::matmul(g, in_value(t, s, 1)));
                       t.accumulate(in_id(t, s, 1), wavy::matmul_tn(g, in_value(t, s, 0)));
                     });
}

Var TapeOps::add_row(Var a, Var row) {
  return tape_->push("add_row", {a.id, row.id}, wavy::add_row(value(a), value(row)), [](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    t.accumulate(in_id(t, s, 0), g);
    t.accumulate(in_id(t, s, 1), column_sums(g));
  });
}

Var TapeOps::mul_row(Var a, Var row) {
  return tape_->push("mul_row", {a.id, row.id}, wavy::mul_row(value(a), value(row)), [](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    const Matrix& av = in_value(t, s, 0);
    const Matrix& rv = in_value(t, s, 1);
    t.accumulate(in_id(t, s, 0), wavy::mul_row(g, rv));
    const Matrix prod = wavy::hadamard(g, av);
    t.accumulate(in_id(t, s, 1), rv.cols() == 1 ? Matrix(1, 1, wavy::sum(prod)) : column_sums(prod));
  });
}

Var TapeOps::sigmoid(Var a) {
  return tape_->push("sigmoid", {a.id}, wavy::sigmoid(value(a)), [](Tape& t, std::size_t s) {
    const Matrix& y = t.node(s).value;
    const Matrix& g = t.upstream(s);
    Matrix d(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.size(); ++i) d.data()[i] = g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
    t.accumulate(in_id(t, s, 0), d);
  });
}

Var TapeOps::row_softmax(Var a) {
  return tape_->push("row_softmax", {a.id}, wavy::row_softmax(value(a)), [](Tape& t, std::size_t s) {
    const Matrix& y = t.node(s).value;
    const Matrix& g = t.upstream(s);
    Matrix d(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
    }
    t.accumulate(in_id(t, s, 0), d);
  });
}

Var TapeOps::layer_norm(Var x, Var gamma, Var beta, double eps) {
  Matrix out = wavy::layer_norm(value(x), value(gamma), value(beta), eps);
  return tape_->push("layer_norm", {x.id, gamma.id, beta.id}, std::move(out), [eps](Tape& t, std::size_t s) {
    const Matrix& xv = in_value(t, s, 0);
    const Matrix& gv = in_value(t, s, 1);
    const Matrix& g = t.upstream(s);
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    Matrix dx(n, d);
    Matrix dgamma(1, d);
    Matrix dbeta(1, d);
    std::vector<double> xhat(d);
    std::vector<double> dxhat(d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto [mean, var] = row_stats(xv.row(i));
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_dxhat = 0.0;
      double mean_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (xv(i, j) - mean) * inv;
        dxhat[j] = g(i, j) * gv(0, j);
        dgamma(0, j) += g(i, j) * xhat[j];
        dbeta(0, j) += g(i, j);
        mean_dxhat += dxhat[j];
        mean_dxhat_xhat += dxhat[j] * xhat[j];
      }
      mean_dxhat /= static_cast<double>(d);
      mean_dxhat_xhat /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) dx(i, j) = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    }
    t.accumulate(in_id(t, s, 0), dx);
    t.accumulate(in_id(t, s, 1), dgamma);
    t.accumulate(in_id(t, s, 2), dbeta);
  });
}

Var TapeOps::layer_norm_velocity(Var x, Var y, Var gamma, double eps) {
  Matrix out = wavy::layer_norm_velocity(value(x), value(y), value(gamma), eps);
  return tape_->push("layer_norm_velocity", {x.id, y.id, gamma.id}, std::move(out),
                     [eps](Tape& t, std::size_t s) {
                       const Matrix& xv = in_value(t, s, 0);
                       const Matrix& yv = in_value(t, s, 1);
                       const Matrix& gv = in_value(t, s, 2);
                       const Matrix& g = t.upstream(s);
                       const std::size_t n = xv.rows();
                       const std::size_t d = xv.cols();
                       Matrix dx(n, d);
                       Matrix dy(n, d);
                       Matrix dgamma(1, d);
                       for (std::size_t i = 0; i < n; ++i) {
                         const auto [mean, var] = row_stats(xv.row(i));
                         const double sd = std::sqrt(var + eps);
                         const double inv = 1.0 / sd;
                         // Linear in y; x enters only through 1/sd.
                         double c = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           dy(i, j) = g(i, j) * gv(0, j) * inv;
                           dgamma(0, j) += g(i, j) * yv(i, j) * inv;
                           c += g(i, j) * yv(i, j) * gv(0, j);
                         }
                         const double k = -c * inv * inv * inv / static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) dx(i, j) = k * (xv(i, j) - mean);
                       }
                       t.accumulate(in_id(t, s, 0), dx);
                       t.accumulate(in_id(t, s, 1), dy);
                       t.accumulate(in_id(t, s, 2), dgamma);
                     });
}

Var TapeOps::activation(Var z, Activation kind) {
  if (kind == Activation::kRelu) relu_inputs_.push_back(value(z));
  return tape_->push("activation", {z.id}, wavy::activation(value(z), kind), [kind](Tape& t, std::size_t s) {
    t.accumulate(in_id(t, s, 0), wavy::hadamard(t.upstream(s), wavy::activation_derivative(in_value(t, s, 0), kind)));
  });
}

Var TapeOps::activation_derivative(Var z, Activation kind) {
  if (kind == Activation::kRelu) relu_inputs_.push_back(value(z));
  return tape_->push("activation_derivative", {z.id}, wavy::activation_derivative(value(z), kind),
                     [kind](Tape& t, std::size_t s) {
                       const Matrix second = map(in_value(t, s, 0), [kind](double v) {
                         return activation_second_derivative(v, kind);
                       });
                       t.accumulate(in_id(t, s, 0), wavy::hadamard(t.upstream(s), second));
                     });
}

Var TapeOps::slice_rows(Var a, std::size_t first, std::size_t count) {
  return tape_->push("slice_rows", {a.id}, wavy::slice_rows(value(a), first, count),
                     [first](Tape& t, std::size_t s) {
                       const Matrix& src = in_value(t, s, 0);
                       const Matrix& g = t.upstream(s);
                       Matrix d(src.rows(), src.cols());
                       for (std::size_t i = 0; i < g.rows(); ++i)
                         for (std::size_t j = 0; j < g.cols(); ++j) d(first + i, j) = g(i, j);
                       t.accumulate(in_id(t, s, 0), d);
                     });
}

Var TapeOps::concat_rows(std::span<const Var> parts) {
  std::vector<Matrix> values;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    values.push_back(value(p));
    ids.push_back(p.id);
  }
  return tape_->push("concat_rows", std::move(ids), wavy::concat_rows(values), [](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < t.node(s).inputs.size(); ++k) {
      const std::size_t r = in_value(t, s, k).rows();
      t.accumulate(in_id(t, s, k), wavy::slice_rows(g, offset, r));
      offset += r;
    }
  });
}

Var TapeOps::concat_cols(std::span<const Var> parts) {
  std::vector<Matrix> values;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    values.push_back(value(p));
    ids.push_back(p.id);
  }
  return tape_->push("concat_cols", std::move(ids), wavy::concat_cols(values), [](Tape& t, std::size_t s) {
    const Matrix& g = t.upstream(s);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < t.node(s).inputs.size(); ++k) {
      const std::size_t c = in_value(t, s, k).cols();
      t.accumulate(in_id(t, s, k), wavy::slice_cols(g, offset, c));
      offset += c;
    }
  });
}

Var TapeOps::gather_rows(Var table, std::span<const int> idx) {
  std::vector<int> indices(idx.begin(), idx.end());
  return tape_->push("gather_rows", {table.id}, wavy::gather_rows(value(table), idx),
                     [indices = std::move(indices)](Tape& t, std::size_t s) {
                       const Matrix& src = in_value(t, s, 0);
                       const Matrix& g = t.upstream(s);
                       Matrix d(src.rows(), src.cols());
                       for (std::size_t i = 0; i < indices.size(); ++i) {
                         const auto r = static_cast<std::size_t>(indices[i]);
                         for (std::size_t j = 0; j < g.cols(); ++j) d(r, j) += g(i, j);
                       }
                       t.accumulate(in_id(t, s, 0), d);
                     });
}

Var TapeOps::sum(Var a) {
  return tape_->push("sum", {a.id}, Matrix(1, 1, wavy::sum(value(a))), [](Tape& t, std::size_t s) {
    const Matrix& src = in_value(t, s, 0);
    t.accumulate(in_id(t, s, 0), Matrix(src.rows(), src.cols(), t.upstream(s)(0, 0)));
  });
}

Var TapeOps::cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& z = value(logits);
  if (targets.size() != z.rows()) {
    fail(ErrorCode::kShapeMismatch, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                        std::to_string(z.rows()) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::size_t count = 0;
  for (int y : tgt) {
    if (y == -1) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
      fail(ErrorCode::kVocabOverflow, "target id " + std::to_string(y) + " outside output vocabulary");
    }
    ++count;
  }
  if (count == 0) fail(ErrorCode::kInvalidArgument, "cross_entropy needs at least one target");
  const Matrix p = wavy::row_softmax(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    if (tgt[i] == -1) continue;
    const auto row = z.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double se = 0.0;
    for (double v : row) se += std::exp(v - mx);
    loss += mx + std::log(se) - row[static_cast<std::size_t>(tgt[i])];
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  return tape_->push("cross_entropy", {logits.id}, Matrix(1, 1, loss * inv_count),
                     [p, tgt = std::move(tgt), inv_count](Tape& t, std::size_t s) {
                       const double g = t.upstream(s)(0, 0) * inv_count;
                       Matrix d(p.rows(), p.cols());
                       for (std::size_t i = 0; i < tgt.size(); ++i) {
                         if (tgt[i] == -1) continue;
                         for (std::size_t j = 0; j < p.cols(); ++j) d(i, j) = g * p(i, j);
                         d(i, static_cast<std::size_t>(tgt[i])) -= g;
                       }
                       t.accumulate(in_id(t, s, 0), d);
                     });
}

Matrix TapeOps::param_grad(const Matrix& m) const {
  if (auto it = params_.find(&m); it != params_.end()) return tape_->grad({it->second});
  return Matrix(m.rows(), m.cols());
}

}  // namespace wavy
