#pragma once

#include "snagg/rng.hpp"
#include "snagg/tape.hpp"

#include <optional>
#include <span>

namespace snagg {

// Every operation takes tape handles and records one node on the tape that
// owns its first argument. No implicit broadcasting: binary operations need
// identical shapes.

/// a[m x k] * b[k x n] -> [m x n].
Var matmul(Var a, Var b);

/// w[out x in] * x (+ b), where x holds `in` values in any shape and b is [out].
Var linear(Var w, Var x, std::optional<Var> b = std::nullopt);

enum class Elementwise { Relu, Sigmoid, Tanh, Add, Mul };

Var elementwise(Elementwise kind, std::span<const Var> args);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var scale(Var x, double factor);

/// Cross-correlation of input[C_in x H x W] with kernels[C_out x C_in x kh x kw].
/// An optional bias[C_out] is added per output channel.
Var conv2d(Var input, Var kernels, std::optional<Var> bias, int stride, int padding);

/// Max over k x k windows; the gradient goes to the first maximum in
/// row-major window order.
Var max_pool2d(Var input, int k, int stride);

/// [C x H x W] -> [C], mean over the spatial extent.
Var global_avg_pool(Var input);

/// Elementwise maximum over a list of same-shape tensors. Ties resolve to the
/// earliest list entry.
Var temporal_max_pool(std::span<const Var> frames);

/// [P x ...] -> [...], maximum over the leading axis, earliest index on ties.
Var max_over_leading(Var x);

/// List of same-shape tensors -> [T x ...].
Var stack(std::span<const Var> items);

/// Flattens and concatenates into one rank-1 tensor.
Var concat(std::span<const Var> items);

Var reshape(Var x, Shape shape);
Var flatten(Var x);

/// Sum of all elements, shape [1].
Var sum(Var x);
/// Elementwise sum of same-shape tensors.
Var add_n(std::span<const Var> items);

/// input[T x C x H x W] convolved with kernels[O x kt x C x kh x kw]; the
/// temporal axis uses stride `time_stride` without padding, the spatial axes
/// use stride 1 and `padding`. Output is [P x O x H' x W'] with
/// P = (T - kt) / time_stride + 1.
Var conv3d_time(Var input, Var kernels, std::optional<Var> bias, int time_stride, int padding);

/// -log softmax(logits)[label] with max-subtraction; shape [1].
Var softmax_cross_entropy(Var logits, int label);

/// Inverted dropout. keep_prob is the fraction of units kept; masks come from
/// `rng`. Identity when !training or keep_prob == 1.
Var dropout(Var x, double keep_prob, Rng& rng, bool training);

Vector softmax(const Vector& logits);

}  // namespace snagg
