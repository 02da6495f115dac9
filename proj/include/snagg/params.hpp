#pragma once

#include "snagg/rng.hpp"
#include "snagg/tape.hpp"

#include <functional>
#include <map>
#include <string>

namespace snagg {

/// Registers each named parameter on a tape at most once, so every use of a
/// shared weight (one per frame, one per time step) feeds the same leaf and
/// the leaf gradient is the sum over uses.
class ParamBinding {
 public:
  using TrainablePredicate = std::function<bool(const std::string&)>;

  ParamBinding(Tape& tape, const ParamSet& params, TrainablePredicate trainable = {});

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }
  const ParamSet& params() const { return params_; }

 private:
  Tape& tape_;
  const ParamSet& params_;
  TrainablePredicate trainable_;
  std::map<std::string, Var> bound_;
};

/// Values drawn uniformly from [-limit, limit].
Tensor uniform_tensor(Shape shape, double limit, Rng& rng);

}  // namespace snagg
