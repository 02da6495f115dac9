#include "snagg/params.hpp"

namespace snagg {

ParamBinding::ParamBinding(Tape& tape, const ParamSet& params, TrainablePredicate trainable)
    : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

Var ParamBinding::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  auto p = params_.find(name);
  if (p == params_.end()) throw ContractError("missing parameter '" + name + "'");
  const bool trainable = !trainable_ || trainable_(name);
  Var v = tape_.parameter(name, p->second, trainable);
  bound_.emplace(name, v);
  return v;
}

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace snagg
