#include "snagg/tape.hpp"

namespace snagg {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::Parameter: return "parameter";
    case OpKind::Matmul: return "matmul";
    case OpKind::Linear: return "linear";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::TemporalMax: return "temporal_max";
    case OpKind::MaxLeading: return "max_leading";
    case OpKind::Stack: return "stack";
    case OpKind::Concat: return "concat";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sum: return "sum";
    case OpKind::AddN: return "add_n";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::Dropout: return "dropout";
    case OpKind::Conv3dTime: return "conv3d_time";
  }
  return "?";
}

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.kind = OpKind::Variable;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const std::string& name, const Tensor& value, bool trainable) {
  Node n;
  n.kind = OpKind::Parameter;
  n.value = value;
  n.requires_grad = trainable;
  n.parameter = name;
  return push(std::move(n));
}

Var Tape::record(OpKind kind, std::vector<int> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  for (int in : n.inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size())
      throw ContractError(std::string("op ") + op_name(kind) + " references an unknown node");
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  n.value = forward(*this);
  if (!n.value.all_finite())
    throw NumericError(std::string("op ") + op_name(kind) + " produced a non-finite value");
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::accumulate(int id, const Vector& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Vector::Zero(n.value.data.size());
  n.grad += g;
}

void Tape::backward(Var root, BackwardMode mode) {
  if (root.tape != this) throw ContractError("backward root belongs to a different tape");
  if (value(root.id).size() != 1)
    throw ContractError("backward requires a scalar root, got shape " + to_string(value(root.id).shape));
  if (backward_done_ && mode == BackwardMode::Exclusive)
    throw ContractError("backward called twice without zero_grad()");
  backward_done_ = true;

  for (Node& n : nodes_) {
    if (!n.requires_grad) continue;
    if (n.grad.size() == 0 || n.backward) n.grad = Vector::Zero(n.value.data.size());
  }

  Node& r = nodes_[static_cast<std::size_t>(root.id)];
  if (!r.requires_grad) return;
  r.grad[0] += 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.isZero(0.0)) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0);
  backward_done_ = false;
}

Tensor Tape::grad_of(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) return Tensor(n.value.shape);
  return Tensor(n.value.shape, n.grad);
}

ParamSet Tape::parameter_grads() const {
  ParamSet out;
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::Parameter || !n.requires_grad) continue;
    Tensor g = n.grad.size() ? Tensor(n.value.shape, n.grad) : Tensor(n.value.shape);
    if (n.parameter == fault_parameter_) g.data *= fault_factor_;
    auto it = out.find(n.parameter);
    if (it == out.end())
      out.emplace(n.parameter, std::move(g));
    else
      it->second.data += g.data;
  }
  return out;
}

bool Tape::replay_matches() const {
  for (const Node& n : nodes_) {
    if (!n.forward) continue;
    if (!identical(n.forward(*this), n.value)) return false;
  }
  return true;
}

void Tape::set_gradient_fault(const std::string& parameter, double factor) {
  fault_parameter_ = parameter;
  fault_factor_ = factor;
}

}  // namespace snagg
