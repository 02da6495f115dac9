#include "snagg/flow.hpp"

#include <cmath>

namespace snagg {

Tensor FlowImage::to_frame() const {
  const int h = static_cast<int>(u.rows()), w = static_cast<int>(u.cols());
  Tensor t({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c);
      t[i] = static_cast<double>(static_cast<float>(u(r, c) / 255.0));
      t[plane + i] = static_cast<double>(static_cast<float>(v(r, c) / 255.0));
    }
  }
  return t;
}

Plane<double> to_gray(const Tensor& frame) {
  if (frame.rank() != 3) throw DimensionError("to_gray: expected a [C x H x W] frame, got " + to_string(frame.shape));
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  if (c != 1 && c != 3) throw DimensionError("to_gray: frames need 1 or 3 channels, got " + std::to_string(c));
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  auto channel = [&](int k) {
    return Eigen::Map<const Plane<double>>(frame.data.data() + k * plane, h, w);
  };
  if (c == 1) return channel(0);
  return 0.299 * channel(0) + 0.587 * channel(1) + 0.114 * channel(2);
}

FlowField<double> compute_flow(const Tensor& frame_a, const Tensor& frame_b, int iterations, double smoothness) {
  if (frame_a.shape != frame_b.shape)
    throw DimensionError("compute_flow: frame shapes " + to_string(frame_a.shape) + " and " +
                         to_string(frame_b.shape) + " differ");
  return horn_schunck(to_gray(frame_a), to_gray(frame_b), iterations, smoothness);
}

int encode_flow_value(double x) {
  if (std::isnan(x)) throw NumericError("encode_flow_value: NaN flow component");
  const double c = std::clamp(x, -40.0, 40.0);
  // p = floor((c + 40) * 51/16 + 1/2); the double estimate is corrected with
  // exact sign tests of 51c - (16n - 2048), which fma evaluates with one rounding.
  int n = static_cast<int>(std::floor((c + 40.0) * 51.0 / 16.0 + 0.5));
  n = std::clamp(n, 0, 255);
  auto reaches = [&](int k) { return std::fma(51.0, c, -(16.0 * k - 2048.0)) >= 0.0; };
  while (n < 255 && reaches(n + 1)) ++n;
  while (n > 0 && !reaches(n)) --n;
  return n;
}

FlowImage encode_flow_image(const FlowField<double>& flow) {
  if (flow.u.rows() != flow.v.rows() || flow.u.cols() != flow.v.cols())
    throw DimensionError("encode_flow_image: u and v differ in size");
  FlowImage img;
  img.u = flow.u.unaryExpr([](double x) { return encode_flow_value(x); });
  img.v = flow.v.unaryExpr([](double x) { return encode_flow_value(x); });
  img.zero = Plane<int>::Zero(flow.u.rows(), flow.u.cols());
  return img;
}

VideoSample flow_video(const VideoSample& raw, int sample_ratio, int iterations, double smoothness) {
  if (sample_ratio < 2) throw ParameterError("flow stream: sample ratio must be at least 2");
  const int steps = static_cast<int>(raw.frames.size()) / sample_ratio;
  if (steps < 1)
    throw DataError("flow stream: video '" + raw.video_id + "' has " + std::to_string(raw.frames.size()) +
                    " raw frames, needs at least " + std::to_string(sample_ratio));
  VideoSample out;
  out.video_id = raw.video_id;
  out.labels = raw.labels;
  out.frames.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const auto i = static_cast<std::size_t>(t * sample_ratio);
    out.frames.push_back(encode_flow_image(compute_flow(raw.frames[i], raw.frames[i + 1], iterations, smoothness))
                             .to_frame());
  }
  return out;
}

Dataset flow_stream_dataset(const Dataset& raw, int sample_ratio, int iterations, double smoothness) {
  Dataset out;
  out.num_classes = raw.num_classes;
  out.stream = "flow";
  out.videos.reserve(raw.videos.size());
  for (const VideoSample& v : raw.videos) out.videos.push_back(flow_video(v, sample_ratio, iterations, smoothness));
  return out;
}

}  // namespace snagg
