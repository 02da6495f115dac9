#pragma once

#include "snagg/tensor.hpp"

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace snagg {

enum class OpKind {
  Constant,
  Variable,
  Parameter,
  Matmul,
  Linear,
  Add,
  Mul,
  Scale,
  Relu,
  Sigmoid,
  Tanh,
  Conv2d,
  MaxPool2d,
  GlobalAvgPool,
  TemporalMax,
  MaxLeading,
  Stack,
  Concat,
  Reshape,
  Sum,
  AddN,
  SoftmaxCrossEntropy,
  Dropout,
  Conv3dTime,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. References returned by value() stay valid
/// while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class BackwardMode { Exclusive, Accumulate };

/// Reverse-mode differentiation record.
///
/// Nodes are appended in creation order, so every input id is smaller than
/// the id of its consumer. Each node keeps its forward value, a closure that
/// recomputes that value from its inputs (used by replay()), and a closure
/// that pushes the node's gradient into its inputs.
class Tape {
 public:
  using ForwardFn = std::function<Tensor(const Tape&)>;
  using BackwardFn = std::function<void(Tape&, const Vector& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a named parameter; gradients are reported by parameter_grads().
  Var parameter(const std::string& name, const Tensor& value, bool trainable = true);

  Var record(OpKind kind, std::vector<int> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Vector& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  OpKind kind(int id) const { return nodes_[static_cast<std::size_t>(id)].kind; }
  const std::vector<int>& inputs(int id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id` if it requires grad.
  void accumulate(int id, const Vector& g);

  /// Fills gradients of every requires_grad node reachable from the scalar `root`.
  void backward(Var root, BackwardMode mode = BackwardMode::Exclusive);
  void zero_grad();
  bool backward_done() const { return backward_done_; }

  Tensor grad_of(Var v) const;
  /// Parameter name -> gradient for every trainable parameter leaf.
  ParamSet parameter_grads() const;

  /// Recomputes every recorded operation from its inputs and reports whether
  /// all outputs are bit-identical to the stored values. Stored values are
  /// never modified.
  bool replay_matches() const;

  /// Test hook: multiplies the reported gradient of one parameter by `factor`.
  void set_gradient_fault(const std::string& parameter, double factor);

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<int> inputs;
    Tensor value;
    Vector grad;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
    std::string parameter;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
  std::string fault_parameter_;
  double fault_factor_ = 1.0;
};

}  // namespace snagg
