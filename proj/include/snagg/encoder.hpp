#pragma once

#include "snagg/params.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace snagg {

/// One convolution stage: conv (padding kernel_size / 2) + bias, ReLU, then an
/// optional spatial max-pool (pool_k == 0 disables it).
struct ConvLayerConfig {
  int out_channels = 0;
  int kernel_size = 3;
  int stride = 1;
  int pool_k = 0;
  int pool_stride = 0;

  bool operator==(const ConvLayerConfig&) const = default;
};

enum class FeatureTap { LastConv, LastFc };

struct InputShape {
  int channels = 3;
  int height = 32;
  int width = 32;

  bool operator==(const InputShape&) const = default;
};

/// Per-frame convolutional tower. The same parameters are applied to every
/// frame of a clip.
struct EncoderConfig {
  InputShape input;
  std::vector<ConvLayerConfig> conv_layers;
  bool global_avg_pool = false;
  /// Only instantiated when feature_tap == LastFc.
  std::vector<int> fc_layers;
  /// Fraction of units dropped in fully connected layers (0.6 keeps 40%).
  double dropout_ratio = 0.0;
  FeatureTap feature_tap = FeatureTap::LastConv;
  /// Per-channel values subtracted from the input before the first layer;
  /// empty leaves the input unchanged.
  std::vector<double> input_mean;

  bool operator==(const EncoderConfig&) const = default;
};

enum class Mode { Train, Infer };

/// Throws ParameterError / DimensionError when a layer does not fit.
void validate(const EncoderConfig& cfg);

/// Shape after the convolution stack (and global pooling, when enabled).
Shape conv_output_shape(const EncoderConfig& cfg);

/// Shape of the activation exposed at cfg.feature_tap.
Shape feature_shape(const EncoderConfig& cfg);

std::vector<std::string> preset_names();

/// Desk-scale encoder presets; see README for the layer tables.
EncoderConfig preset(std::string_view name);
EncoderConfig preset(std::string_view name, InputShape input);

void init_encoder(const EncoderConfig& cfg, ParamSet& params, Rng& rng, const std::string& prefix = "encoder");

struct FrameFeatures {
  std::vector<Var> per_frame;
  Shape tap_shape;
};

Var encode_frame(ParamBinding& bind, const EncoderConfig& cfg, const Tensor& frame, Mode mode, Rng& rng,
                 const std::string& prefix = "encoder");

/// Encodes every frame with the shared parameters. Train-mode dropout masks
/// are drawn frame by frame from `rng`.
FrameFeatures encode_frames(ParamBinding& bind, const EncoderConfig& cfg, std::span<const Tensor> frames, Mode mode,
                            Rng& rng, const std::string& prefix = "encoder");

}  // namespace snagg
