#include "snagg/lstm.hpp"

#include "snagg/ops.hpp"

namespace snagg {
namespace {

constexpr const char* kGates[] = {"input_gate", "forget_gate", "cell", "output_gate"};

std::string layer_prefix(const std::string& prefix, int layer) { return prefix + std::to_string(layer); }

bool has_peephole(const std::string& gate) { return gate != "cell"; }

}  // namespace

void validate(const StackSpec& spec) {
  if (spec.num_layers < 1) throw ParameterError("lstm: num_layers must be at least 1");
  if (spec.hidden_size < 1) throw ParameterError("lstm: hidden_size must be at least 1");
  if (spec.num_classes < 1) throw ParameterError("lstm: num_classes must be at least 1");
  if (spec.input_size < 1) throw ParameterError("lstm: input_size must be at least 1");
}

void init_lstm_stack(const StackSpec& spec, ParamSet& params, Rng& rng, const std::string& prefix) {
  validate(spec);
  constexpr double limit = 0.08;
  int in = spec.input_size;
  const int n = spec.hidden_size;
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string lp = layer_prefix(prefix, l);
    for (const std::string gate : kGates) {
      params[lp + "." + gate + ".from_input"] = uniform_tensor({n, in}, limit, rng);
      params[lp + "." + gate + ".from_hidden"] = uniform_tensor({n, n}, limit, rng);
      if (has_peephole(gate)) params[lp + "." + gate + ".peephole"] = uniform_tensor({n}, limit, rng);
      params[lp + "." + gate + ".bias"] =
          gate == "forget_gate" ? Tensor::filled({n}, 1.0) : uniform_tensor({n}, limit, rng);
    }
    in = n;
  }
  params[prefix + ".classifier.weight"] = uniform_tensor({spec.num_classes, n}, limit, rng);
  params[prefix + ".classifier.bias"] = Tensor({spec.num_classes});
}

LstmLayerParams<double> lstm_layer_params(const ParamSet& params, int layer, const std::string& prefix) {
  const std::string lp = layer_prefix(prefix, layer);
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("missing parameter '" + name + "'");
    return it->second;
  };
  auto gate = [&](const std::string& g) {
    GateWeights<double> w;
    w.from_input = get(lp + "." + g + ".from_input").matrix();
    w.from_hidden = get(lp + "." + g + ".from_hidden").matrix();
    if (has_peephole(g)) w.peephole = get(lp + "." + g + ".peephole").data;
    w.bias = get(lp + "." + g + ".bias").data;
    return w;
  };
  return {gate("input_gate"), gate("forget_gate"), gate("cell"), gate("output_gate")};
}

LstmVars lstm_cell_step(ParamBinding& bind, const std::string& lp, Var x, LstmVars prev) {
  auto pre = [&](const std::string& g) {
    return add(linear(bind(lp + "." + g + ".from_input"), x, bind(lp + "." + g + ".bias")),
               linear(bind(lp + "." + g + ".from_hidden"), prev.h));
  };
  auto peep = [&](const std::string& g, Var cell) { return mul(bind(lp + "." + g + ".peephole"), cell); };

  Var i = sigmoid(add(pre("input_gate"), peep("input_gate", prev.c)));
  Var f = sigmoid(add(pre("forget_gate"), peep("forget_gate", prev.c)));
  Var c = add(mul(f, prev.c), mul(i, tanh(pre("cell"))));
  Var o = sigmoid(add(pre("output_gate"), peep("output_gate", c)));
  Var h = mul(o, tanh(c));
  return {h, c};
}

std::vector<Var> stack_forward(ParamBinding& bind, const StackSpec& spec, std::span<const Var> inputs,
                               const std::string& prefix) {
  validate(spec);
  if (inputs.empty()) throw ParameterError("stack_forward: empty input sequence");
  Tape& tape = bind.tape();
  std::vector<Var> seq;
  seq.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (static_cast<int>(inputs[t].value().size()) != spec.input_size)
      throw DimensionError("stack_forward: step " + std::to_string(t) + " has " +
                           std::to_string(inputs[t].value().size()) + " features, expected " +
                           std::to_string(spec.input_size));
    seq.push_back(inputs[t].shape().size() == 1 ? inputs[t] : flatten(inputs[t]));
  }
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string lp = layer_prefix(prefix, l);
    LstmVars state{tape.constant(Tensor({spec.hidden_size})), tape.constant(Tensor({spec.hidden_size}))};
    for (Var& x : seq) {
      state = lstm_cell_step(bind, lp, x, state);
      x = state.h;
    }
  }
  std::vector<Var> logits;
  logits.reserve(seq.size());
  for (Var h : seq)
    logits.push_back(linear(bind(prefix + ".classifier.weight"), h, bind(prefix + ".classifier.bias")));
  return logits;
}

Var lstm_loss(std::span<const Var> per_frame_logits, int label, std::span<const double> gains) {
  if (per_frame_logits.empty()) throw ParameterError("lstm_loss: empty sequence");
  if (gains.size() != per_frame_logits.size())
    throw DimensionError("lstm_loss: " + std::to_string(gains.size()) + " gains for " +
                         std::to_string(per_frame_logits.size()) + " frames");
  std::vector<Var> terms;
  terms.reserve(gains.size());
  for (std::size_t t = 0; t < gains.size(); ++t)
    terms.push_back(scale(softmax_cross_entropy(per_frame_logits[t], label), gains[t]));
  return add_n(terms);
}

}  // namespace snagg
