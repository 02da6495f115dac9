#include "snagg/grad_check.hpp"

#include "snagg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace snagg {

bool GradCheckReport::pass() const {
  return !blocks.empty() && std::all_of(blocks.begin(), blocks.end(), [](const BlockResult& b) { return b.pass; });
}

ArchitectureSpec micro_spec(ArchKind kind) {
  EncoderConfig enc;
  enc.input = {1, 8, 8};
  enc.conv_layers = {{4, 3, 1, 2, 2}};
  enc.dropout_ratio = 0.25;
  std::vector<int> fc{6};
  if (kind == ArchKind::InceptionTapPooling) {
    enc.conv_layers = {{4, 3, 1, 2, 2}, {6, 3, 1, 0, 0}};
    fc = {6, 5};
  }
  ArchitectureSpec spec = make_spec(kind, enc, 3, 4, fc);
  spec.temporal_window = 2;
  spec.temporal_stride = 1;
  spec.tdc_channels = 3;
  spec.lstm_layers = 2;
  spec.lstm_hidden = 4;
  validate(spec);
  return spec;
}

GradCheckReport grad_check(const ArchitectureSpec& spec, const GradCheckOptions& opts) {
  if (opts.step <= 0) throw ParameterError("grad_check: step must be positive");
  if (opts.tolerance < 0) throw ParameterError("grad_check: tolerance must be non-negative");
  validate(spec);
  ParamSet params = init_params(spec, opts.seed);
  Rng data_rng = Rng::derive(opts.seed, "gradcheck/data");
  std::vector<Tensor> frames;
  const InputShape& in = spec.encoder.input;
  for (int t = 0; t < spec.frames; ++t) frames.push_back(uniform_tensor({in.channels, in.height, in.width}, 1.0, data_rng));
  const int label = static_cast<int>(data_rng.below(static_cast<std::uint64_t>(spec.num_classes)));

  auto loss_at = [&](const ParamSet& p, ParamSet* grads) {
    Tape tape;
    if (grads && !opts.corrupt.empty()) tape.set_gradient_fault(opts.corrupt, opts.corrupt_factor);
    ParamBinding bind(tape, p);
    Rng drop = Rng::derive(opts.seed, "gradcheck/dropout");
    const LogitsOutput out = forward(bind, spec, frames, Mode::Train, drop);
    Var loss = training_loss(spec, out, label);
    if (grads) {
      tape.backward(loss);
      *grads = tape.parameter_grads();
    }
    return loss.value()[0];
  };

  ParamSet analytic;
  loss_at(params, &analytic);
  GradCheckReport report;
  report.architecture = std::string(kind_name(spec.kind));
  Rng pick = Rng::derive(opts.seed, "gradcheck/pick");
  for (const auto& [name, g] : analytic) {
    std::vector<std::size_t> idx(g.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_entries > 0 && idx.size() > static_cast<std::size_t>(opts.max_entries)) {
      pick.shuffle(idx);
      idx.resize(static_cast<std::size_t>(opts.max_entries));
      std::sort(idx.begin(), idx.end());
    }
    BlockResult block{name, idx.size(), 0.0, false};
    Tensor& w = params.at(name);
    for (std::size_t i : idx) {
      const double orig = w[i];
      w[i] = orig + opts.step;
      const double up = loss_at(params, nullptr);
      w[i] = orig - opts.step;
      const double down = loss_at(params, nullptr);
      w[i] = orig;
      const double fd = (up - down) / (2 * opts.step);
      const double err = std::abs(g[i] - fd) / std::max({1.0, std::abs(g[i]), std::abs(fd)});
      block.max_rel_error = std::max(block.max_rel_error, err);
    }
    block.pass = block.max_rel_error < opts.tolerance;
    report.blocks.push_back(block);
  }
  return report;
}

void print_report(std::ostream& out, const GradCheckReport& report, double tolerance) {
  char buf[256];
  for (const BlockResult& b : report.blocks) {
    std::snprintf(buf, sizeof buf, "%-22s %-36s %6zu  %.3e  %s\n", report.architecture.c_str(), b.name.c_str(),
                  b.checked, b.max_rel_error, b.pass ? "pass" : "FAIL");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-22s %s (tolerance %.1e)\n", report.architecture.c_str(),
                report.pass() ? "PASS" : "FAIL", tolerance);
  out << buf;
}

}  // namespace snagg
