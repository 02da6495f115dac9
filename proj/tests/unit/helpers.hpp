#pragma once

#include "snagg/model.hpp"
#include "snagg/ops.hpp"
#include "snagg/rng.hpp"
#include "snagg/tape.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <cmath>
#include <functional>
#include <vector>

namespace snagg::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline double rel_error(double g, double fd) {
  return std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
}

/// Builds an expression from tape variables; the harness reduces it to a
/// scalar with fixed random weights.
using Builder = std::function<Var(const std::vector<Var>&)>;

/// Largest relative error between tape gradients and central differences
/// over every entry of every input.
inline double max_fd_error(const std::vector<Tensor>& inputs, const Builder& build, double h = 1e-5,
                           std::uint64_t seed = 99) {
  std::vector<Tensor> weights;
  auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(tape.variable(x));
    Var out = build(vars);
    if (weights.empty()) {
      Rng rng(seed);
      weights.push_back(random_tensor(out.shape(), rng, 0.5, 1.5));
    }
    Var loss = sum(mul(out, tape.constant(weights.front())));
    if (grads) {
      tape.backward(loss);
      for (Var v : vars) grads->push_back(tape.grad_of(v));
    }
    return loss.value()[0];
  };
  std::vector<Tensor> grads;
  evaluate(inputs, &grads);
  double worst = 0.0;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double up = evaluate(xs, nullptr);
      xs[k][i] = orig - h;
      const double down = evaluate(xs, nullptr);
      xs[k][i] = orig;
      worst = std::max(worst, rel_error(grads[k][i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("snagg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& rel) const { return path / rel; }
};

inline std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Infer-mode forward pass through the library.
inline LogitsOutput run_forward(Tape& tape, const ArchitectureSpec& spec, const ParamSet& params,
                                const std::vector<Tensor>& frames) {
  ParamBinding bind(tape, params);
  Rng rng(0);
  return forward(bind, spec, frames, Mode::Infer, rng);
}

inline Tensor logits_of(const ArchitectureSpec& spec, const ParamSet& params, const std::vector<Tensor>& frames) {
  Tape tape;
  return run_forward(tape, spec, params, frames).logits.value();
}

/// init_params with nonzero biases, so bias paths show up in oracles.
inline ParamSet random_params(const ArchitectureSpec& spec, std::uint64_t seed) {
  ParamSet p = init_params(spec, seed);
  Rng rng(seed + 1000);
  for (auto& [name, t] : p)
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0)
      for (auto& v : t.data) v = rng.uniform(-0.2, 0.2);
  return p;
}

inline std::vector<Tensor> random_frames(int count, const Shape& shape, Rng& rng) {
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) out.push_back(random_tensor(shape, rng, 0.0, 1.0));
  return out;
}

inline double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace snagg::test
