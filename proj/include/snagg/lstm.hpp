#pragma once

#include "snagg/params.hpp"

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace snagg {

/// Weights feeding one gate (or the cell candidate) of an LSTM layer.
/// Peepholes are diagonal, so `peephole` is a vector; the cell candidate
/// has none and leaves it empty.
template <typename Scalar>
struct GateWeights {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix from_input;
  Matrix from_hidden;
  Vec peephole;
  Vec bias;
};

template <typename Scalar>
struct LstmLayerParams {
  using Vec = typename GateWeights<Scalar>::Vec;

  GateWeights<Scalar> input_gate;
  GateWeights<Scalar> forget_gate;
  GateWeights<Scalar> cell;
  GateWeights<Scalar> output_gate;

  Eigen::Index hidden_size() const { return input_gate.bias.size(); }
  Eigen::Index input_size() const { return input_gate.from_input.cols(); }

  static LstmLayerParams zeros(Eigen::Index input_size, Eigen::Index hidden_size) {
    auto gate = [&](bool peephole) {
      GateWeights<Scalar> g;
      g.from_input.setZero(hidden_size, input_size);
      g.from_hidden.setZero(hidden_size, hidden_size);
      if (peephole) g.peephole.setZero(hidden_size);
      g.bias.setZero(hidden_size);
      return g;
    };
    return {gate(true), gate(true), gate(false), gate(true)};
  }
};

template <typename Scalar>
struct LstmCellState {
  typename GateWeights<Scalar>::Vec h;
  typename GateWeights<Scalar>::Vec c;
};

template <typename Derived>
auto logistic(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) + (-x).exp()).inverse();
}

/// One LSTM time step with diagonal peepholes. The input and forget gates
/// read the previous cell; the output gate reads the updated cell.
template <typename Scalar>
LstmCellState<Scalar> lstm_cell_step(const typename GateWeights<Scalar>::Vec& x, const LstmCellState<Scalar>& prev,
                                     const LstmLayerParams<Scalar>& p) {
  if (x.size() != p.input_size() || prev.h.size() != p.hidden_size() || prev.c.size() != p.hidden_size())
    throw DimensionError("lstm_cell_step: input " + std::to_string(x.size()) + " / state " +
                         std::to_string(prev.h.size()) + "," + std::to_string(prev.c.size()) +
                         " do not match layer (" + std::to_string(p.input_size()) + " -> " +
                         std::to_string(p.hidden_size()) + ")");
  auto pre = [&](const GateWeights<Scalar>& g) {
    return (g.from_input * x + g.from_hidden * prev.h + g.bias).eval();
  };
  const auto i = snagg::logistic((pre(p.input_gate).array() + p.input_gate.peephole.array() * prev.c.array()).eval()).eval();
  const auto f = snagg::logistic((pre(p.forget_gate).array() + p.forget_gate.peephole.array() * prev.c.array()).eval()).eval();
  LstmCellState<Scalar> next;
  next.c = (f * prev.c.array() + i * pre(p.cell).array().tanh()).matrix();
  const auto o = snagg::logistic((pre(p.output_gate).array() + p.output_gate.peephole.array() * next.c.array()).eval()).eval();
  next.h = (o * next.c.array().tanh()).matrix();
  return next;
}

/// Plain recurrent layer with a sigmoid hidden activation and a linear readout.
template <typename Scalar>
struct RnnLayerParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix input_to_hidden;
  Matrix hidden_to_hidden;
  Vec hidden_bias;
  Matrix hidden_to_output;
  Vec output_bias;
};

template <typename Scalar>
struct RnnStepOutput {
  typename RnnLayerParams<Scalar>::Vec h;
  typename RnnLayerParams<Scalar>::Vec y;
};

template <typename Scalar>
RnnStepOutput<Scalar> rnn_cell_step(const typename RnnLayerParams<Scalar>::Vec& x,
                                    const typename RnnLayerParams<Scalar>::Vec& h_prev,
                                    const RnnLayerParams<Scalar>& p) {
  if (x.size() != p.input_to_hidden.cols() || h_prev.size() != p.hidden_to_hidden.cols() ||
      p.hidden_to_output.cols() != p.hidden_to_hidden.rows())
    throw DimensionError("rnn_cell_step: inconsistent shapes");
  RnnStepOutput<Scalar> out;
  out.h = snagg::logistic((p.input_to_hidden * x + p.hidden_to_hidden * h_prev + p.hidden_bias).array()).matrix();
  out.y = p.hidden_to_output * out.h + p.output_bias;
  return out;
}

/// Stack geometry. The desk default hidden size is 32; the reference
/// configuration uses five layers of 512 cells.
struct StackSpec {
  int num_layers = 5;
  int hidden_size = 32;
  int num_classes = 0;
  int input_size = 0;

  bool operator==(const StackSpec&) const = default;
};

void validate(const StackSpec& spec);

/// Uniform [-0.08, 0.08] weights; forget-gate bias starts at +1.
void init_lstm_stack(const StackSpec& spec, ParamSet& params, Rng& rng, const std::string& prefix = "lstm");

/// Reads one layer's parameters out of a ParamSet.
LstmLayerParams<double> lstm_layer_params(const ParamSet& params, int layer, const std::string& prefix = "lstm");

struct LstmVars {
  Var h;
  Var c;
};

/// Tape version of lstm_cell_step.
LstmVars lstm_cell_step(ParamBinding& bind, const std::string& layer_prefix, Var x, LstmVars prev);

/// Runs the stack from a zero state over `inputs` (each flattened) and
/// returns one logit vector per time step from the shared classifier.
std::vector<Var> stack_forward(ParamBinding& bind, const StackSpec& spec, std::span<const Var> inputs,
                               const std::string& prefix = "lstm");

/// sum_t gains[t] * CE(logits[t], label).
Var lstm_loss(std::span<const Var> per_frame_logits, int label, std::span<const double> gains);

}  // namespace snagg
