#include "snagg/encoder.hpp"

#include "snagg/ops.hpp"

#include <cmath>

namespace snagg {
namespace {

std::string layer_name(const std::string& prefix, const char* kind, std::size_t i, const char* what) {
  return prefix + "." + kind + std::to_string(i) + "." + what;
}

}  // namespace

Shape conv_output_shape(const EncoderConfig& cfg) {
  const InputShape& in = cfg.input;
  if (in.channels <= 0 || in.height <= 0 || in.width <= 0)
    throw ParameterError("encoder: input shape must be positive");
  int c = in.channels, h = in.height, w = in.width;
  for (std::size_t i = 0; i < cfg.conv_layers.size(); ++i) {
    const ConvLayerConfig& l = cfg.conv_layers[i];
    if (l.out_channels <= 0 || l.kernel_size <= 0 || l.stride <= 0)
      throw ParameterError("encoder: conv layer " + std::to_string(i) + " has a non-positive size");
    const int pad = l.kernel_size / 2;
    if (l.kernel_size > h + 2 * pad || l.kernel_size > w + 2 * pad)
      throw DimensionError("encoder: conv layer " + std::to_string(i) + " kernel does not fit " + std::to_string(h) +
                           "x" + std::to_string(w));
    c = l.out_channels;
    h = (h + 2 * pad - l.kernel_size) / l.stride + 1;
    w = (w + 2 * pad - l.kernel_size) / l.stride + 1;
    if (l.pool_k > 0) {
      if (l.pool_stride <= 0) throw ParameterError("encoder: pool stride must be positive in layer " + std::to_string(i));
      if (l.pool_k > h || l.pool_k > w)
        throw DimensionError("encoder: pool window of layer " + std::to_string(i) + " does not fit " +
                             std::to_string(h) + "x" + std::to_string(w));
      h = (h - l.pool_k) / l.pool_stride + 1;
      w = (w - l.pool_k) / l.pool_stride + 1;
    }
  }
  if (cfg.global_avg_pool) return {c};
  return {c, h, w};
}

Shape feature_shape(const EncoderConfig& cfg) {
  const Shape conv = conv_output_shape(cfg);
  if (cfg.feature_tap == FeatureTap::LastConv) return conv;
  if (!cfg.fc_layers.empty()) return {cfg.fc_layers.back()};
  if (conv.size() != 1) throw ParameterError("encoder: last_fc tap needs fully connected layers or global pooling");
  return conv;
}

void validate(const EncoderConfig& cfg) {
  if (cfg.dropout_ratio < 0.0 || cfg.dropout_ratio >= 1.0)
    throw ParameterError("encoder: dropout_ratio must lie in [0, 1)");
  if (!cfg.input_mean.empty() && static_cast<int>(cfg.input_mean.size()) != cfg.input.channels)
    throw ParameterError("encoder: input_mean needs one value per channel (" + std::to_string(cfg.input.channels) +
                         "), got " + std::to_string(cfg.input_mean.size()));
  for (double m : cfg.input_mean)
    if (!std::isfinite(m)) throw ParameterError("encoder: input_mean must be finite");
  for (int width : cfg.fc_layers)
    if (width <= 0) throw ParameterError("encoder: fully connected widths must be positive");
  (void)feature_shape(cfg);
}

std::vector<std::string> preset_names() { return {"tiny_alex", "tiny_inception_tap", "micro_alex", "micro_inception_tap"}; }

EncoderConfig preset(std::string_view name) { return preset(name, InputShape{3, 32, 32}); }

EncoderConfig preset(std::string_view name, InputShape input) {
  EncoderConfig cfg;
  cfg.input = input;
  if (name == "tiny_alex") {
    // decreasing kernel ladder, each stage followed by 2x2 max-pooling
    cfg.conv_layers = {{16, 7, 1, 2, 2}, {32, 5, 1, 2, 2}, {32, 3, 1, 2, 2}};
    cfg.fc_layers = {64, 64};
    cfg.dropout_ratio = 0.6;
    cfg.feature_tap = FeatureTap::LastConv;
  } else if (name == "tiny_inception_tap") {
    cfg.conv_layers = {{16, 5, 1, 2, 2}, {32, 3, 1, 2, 2}, {64, 3, 1, 0, 0}};
    cfg.global_avg_pool = true;
    cfg.feature_tap = FeatureTap::LastFc;
  } else if (name == "micro_alex") {
    cfg.conv_layers = {{8, 3, 1, 2, 2}, {16, 3, 1, 2, 2}};
    cfg.fc_layers = {32, 32};
    cfg.feature_tap = FeatureTap::LastConv;
  } else if (name == "micro_inception_tap") {
    cfg.conv_layers = {{8, 3, 1, 2, 2}, {32, 3, 1, 0, 0}};
    cfg.global_avg_pool = true;
    cfg.feature_tap = FeatureTap::LastFc;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ParameterError("unknown encoder preset '" + std::string(name) + "' (known: " + known + ")");
  }
  validate(cfg);
  return cfg;
}

void init_encoder(const EncoderConfig& cfg, ParamSet& params, Rng& rng, const std::string& prefix) {
  validate(cfg);
  int c = cfg.input.channels;
  for (std::size_t i = 0; i < cfg.conv_layers.size(); ++i) {
    const ConvLayerConfig& l = cfg.conv_layers[i];
    const int fan_in = c * l.kernel_size * l.kernel_size;
    params[layer_name(prefix, "conv", i, "weight")] =
        uniform_tensor({l.out_channels, c, l.kernel_size, l.kernel_size}, std::sqrt(6.0 / fan_in), rng);
    params[layer_name(prefix, "conv", i, "bias")] = Tensor({l.out_channels});
    c = l.out_channels;
  }
  if (cfg.feature_tap != FeatureTap::LastFc) return;
  int width = static_cast<int>(numel(conv_output_shape(cfg)));
  for (std::size_t i = 0; i < cfg.fc_layers.size(); ++i) {
    params[layer_name(prefix, "fc", i, "weight")] =
        uniform_tensor({cfg.fc_layers[i], width}, std::sqrt(6.0 / width), rng);
    params[layer_name(prefix, "fc", i, "bias")] = Tensor({cfg.fc_layers[i]});
    width = cfg.fc_layers[i];
  }
}

Var encode_frame(ParamBinding& bind, const EncoderConfig& cfg, const Tensor& frame, Mode mode, Rng& rng,
                 const std::string& prefix) {
  Var x = bind.tape().constant(frame);
  if (!cfg.input_mean.empty()) {
    Tensor centred = frame;
    const Eigen::Index plane = frame.data.size() / frame.dim(0);
    for (std::size_t c = 0; c < cfg.input_mean.size(); ++c)
      centred.data.segment(static_cast<Eigen::Index>(c) * plane, plane).array() -= cfg.input_mean[c];
    x = bind.tape().constant(centred);
  }
  for (std::size_t i = 0; i < cfg.conv_layers.size(); ++i) {
    const ConvLayerConfig& l = cfg.conv_layers[i];
    x = relu(conv2d(x, bind(layer_name(prefix, "conv", i, "weight")), bind(layer_name(prefix, "conv", i, "bias")),
                    l.stride, l.kernel_size / 2));
    if (l.pool_k > 0) x = max_pool2d(x, l.pool_k, l.pool_stride);
  }
  if (cfg.global_avg_pool) x = global_avg_pool(x);
  if (cfg.feature_tap == FeatureTap::LastConv) return x;
  const double keep = 1.0 - cfg.dropout_ratio;
  for (std::size_t i = 0; i < cfg.fc_layers.size(); ++i) {
    x = relu(linear(bind(layer_name(prefix, "fc", i, "weight")), x, bind(layer_name(prefix, "fc", i, "bias"))));
    x = dropout(x, keep, rng, mode == Mode::Train);
  }
  return x;
}

FrameFeatures encode_frames(ParamBinding& bind, const EncoderConfig& cfg, std::span<const Tensor> frames, Mode mode,
                            Rng& rng, const std::string& prefix) {
  const Shape expected{cfg.input.channels, cfg.input.height, cfg.input.width};
  FrameFeatures out;
  out.tap_shape = feature_shape(cfg);
  out.per_frame.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape != expected)
      throw DimensionError("frame " + std::to_string(t) + " has shape " + to_string(frames[t].shape) +
                           ", encoder expects " + to_string(expected));
    out.per_frame.push_back(encode_frame(bind, cfg, frames[t], mode, rng, prefix));
  }
  return out;
}

}  // namespace snagg
