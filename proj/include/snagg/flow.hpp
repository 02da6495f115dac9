#pragma once

#include "snagg/dataset.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace snagg {

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel displacement between two frames, in pixels.
template <typename Scalar = double>
struct FlowField {
  Plane<Scalar> u;
  Plane<Scalar> v;
};

/// Encoded flow raster: channel 0 from u, channel 1 from v, channel 2 zero.
struct FlowImage {
  Plane<int> u;
  Plane<int> v;
  Plane<int> zero;

  /// [3 x H x W] frame tensor with values p / 255.
  Tensor to_frame() const;
};

namespace detail {

template <typename Scalar>
Scalar at_clamped(const Plane<Scalar>& p, Eigen::Index r, Eigen::Index c) {
  return p(std::min(r, p.rows() - 1), std::min(c, p.cols() - 1));
}

/// Weighted neighbourhood mean: 1/6 for edge neighbours, 1/12 for corners,
/// borders replicated.
template <typename Scalar>
Plane<Scalar> local_mean(const Plane<Scalar>& p) {
  const Eigen::Index rows = p.rows(), cols = p.cols();
  Plane<Scalar> out(rows, cols);
  auto px = [&](Eigen::Index r, Eigen::Index c) {
    r = std::clamp<Eigen::Index>(r, 0, rows - 1);
    c = std::clamp<Eigen::Index>(c, 0, cols - 1);
    return p(r, c);
  };
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      out(r, c) = (px(r - 1, c) + px(r + 1, c) + px(r, c - 1) + px(r, c + 1)) / Scalar(6) +
                  (px(r - 1, c - 1) + px(r - 1, c + 1) + px(r + 1, c - 1) + px(r + 1, c + 1)) / Scalar(12);
  return out;
}

}  // namespace detail

/// Horn-Schunck flow from `a` to `b` (grayscale planes of equal size).
///
/// Derivatives use the 2x2x2 cube stencil: each of Ix, Iy, It is the mean of
/// the four first differences across the cube anchored at (r, c), with
/// replicated borders. Starting from zero flow, every Jacobi iteration sets
///   u = ubar - Ix * (Ix*ubar + Iy*vbar + It) / (smoothness^2 + Ix^2 + Iy^2)
/// and likewise for v with Iy.
template <typename Scalar>
FlowField<Scalar> horn_schunck(const Plane<Scalar>& a, const Plane<Scalar>& b, int iterations, Scalar smoothness) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("compute_flow: frames differ in size");
  if (iterations <= 0) throw ParameterError("compute_flow: iterations must be positive");
  if (!(smoothness > Scalar(0))) throw ParameterError("compute_flow: smoothness must be positive");
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Plane<Scalar> ix(rows, cols), iy(rows, cols), it(rows, cols);
  using detail::at_clamped;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Scalar a00 = a(r, c), a01 = at_clamped(a, r, c + 1), a10 = at_clamped(a, r + 1, c),
                   a11 = at_clamped(a, r + 1, c + 1);
      const Scalar b00 = b(r, c), b01 = at_clamped(b, r, c + 1), b10 = at_clamped(b, r + 1, c),
                   b11 = at_clamped(b, r + 1, c + 1);
      ix(r, c) = ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10)) / Scalar(4);
      iy(r, c) = ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01)) / Scalar(4);
      it(r, c) = ((b00 - a00) + (b01 - a01) + (b10 - a10) + (b11 - a11)) / Scalar(4);
    }
  }
  const Plane<Scalar> denom = smoothness * smoothness + ix.square() + iy.square();
  FlowField<Scalar> f{Plane<Scalar>::Zero(rows, cols), Plane<Scalar>::Zero(rows, cols)};
  for (int k = 0; k < iterations; ++k) {
    const Plane<Scalar> ubar = detail::local_mean(f.u);
    const Plane<Scalar> vbar = detail::local_mean(f.v);
    const Plane<Scalar> resid = (ix * ubar + iy * vbar + it) / denom;
    f.u = ubar - ix * resid;
    f.v = vbar - iy * resid;
  }
  return f;
}

/// Grayscale plane of a [C x H x W] frame: C = 1 as is, C = 3 by luma
/// weights 0.299 / 0.587 / 0.114.
Plane<double> to_gray(const Tensor& frame);

FlowField<double> compute_flow(const Tensor& frame_a, const Tensor& frame_b, int iterations, double smoothness);

/// round_half_away((clamp(x, -40, 40) + 40) * 255 / 80).
int encode_flow_value(double x);

FlowImage encode_flow_image(const FlowField<double>& flow);

/// Emits one flow frame per group of `sample_ratio` raw frames: step t uses
/// raw frames t*ratio and t*ratio + 1. Output length is raw length / ratio.
Dataset flow_stream_dataset(const Dataset& raw, int sample_ratio, int iterations, double smoothness);

/// Same as above for one video.
VideoSample flow_video(const VideoSample& raw, int sample_ratio, int iterations, double smoothness);

}  // namespace snagg
