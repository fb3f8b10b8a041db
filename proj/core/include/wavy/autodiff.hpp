#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wavy/norms_ffn.hpp"
#include "wavy/numerics.hpp"

namespace wavy {

/// Handle to a tape node.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
/// inputs precede it; backward walks the nodes once, last to first.
class Tape {
 public:
  /// Accumulates the node's upstream gradient into its inputs' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Matrix value;
    BackwardFn backward;  // empty for leaves
  };

  Var leaf(Matrix value, std::string_view op = "leaf");
  Var push(std::string_view op, std::vector<std::size_t> inputs, Matrix value, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must be 1x1. Throws
  /// GraphCycle if an input does not precede its consumer.
  void backward(Var loss);

  /// Gradient of the last backward pass; zeros if the node was unreached.
  Matrix grad(Var v) const;
  bool has_grad(std::size_t id) const { return id < grads_.size() && !grads_[id].empty(); }
  /// Upstream gradient of a node, valid inside its backward function.
  const Matrix& upstream(std::size_t id) const { return grads_.at(id); }
  /// Adds g into the gradient buffer of node id.
  void accumulate(std::size_t id, const Matrix& g);

 private:
  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

/// Flow backend that records onto a tape. Parameters are keyed by address:
/// repeated ops.param(m) calls on the same matrix share one leaf.
class TapeOps {
 public:
  using Value = Var;

  explicit TapeOps(Tape& tape) : tape_(&tape) {}

  Tape& tape() noexcept { return *tape_; }
  const Matrix& value(Var v) const { return tape_->value(v); }

  Var param(const Matrix& m);
  Var constant(const Matrix& m);
  Var zeros(std::size_t rows, std::size_t cols);
  std::size_t rows(Var v) const { return value(v).rows(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var affine(Var a, double s, double c);
  Var hadamard(Var a, Var b);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add_row(Var a, Var row);
  Var mul_row(Var a, Var row);
  Var sigmoid(Var a);
  Var row_softmax(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var layer_norm_velocity(Var x, Var y, Var gamma, double eps);
  Var activation(Var z, Activation kind);
  Var activation_derivative(Var z, Activation kind);
  Var slice_rows(Var a, std::size_t first, std::size_t count);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var gather_rows(Var table, std::span<const int> idx);

  Var sum(Var a);
  /// Mean cross-entropy of row-wise softmax(logits) over rows whose target is
  /// not -1. Throws InvalidArgument when no row has a target.
  Var cross_entropy(Var logits, std::span<const int> targets);

  /// Gradient of a parameter after tape().backward(); zeros if unused.
  Matrix param_grad(const Matrix& m) const;
  bool uses_param(const Matrix& m) const { return params_.contains(&m); }

  /// Every relu pre-activation seen so far, in evaluation order.
  const std::vector<Matrix>& relu_inputs() const noexcept { return relu_inputs_; }

 private:
  Tape* tape_;
  std::unordered_map<const Matrix*, std::size_t> params_;
  std::vector<Matrix> relu_inputs_;
};

}  // namespace wavy
