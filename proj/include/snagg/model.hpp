#pragma once

#include "snagg/encoder.hpp"
#include "snagg/lstm.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace snagg {

/// Video-level aggregation networks over a shared per-frame encoder.
enum class ArchKind {
  ConvPooling,          ///< max over time of last-conv maps, then FCs
  LatePooling,          ///< per-frame shared FCs, then max over time
  SlowPooling,          ///< windowed max + shared FC, then max over windows
  LocalPooling,         ///< windowed max + shared FCs, one classifier over all windows
  TimeDomainConv,       ///< 3-D conv over (time, h, w), then max over time
  InceptionTapPooling,  ///< max over time of globally pooled vectors, then FCs
  Lstm,                 ///< stacked LSTM with a per-frame classifier
};

std::string_view kind_name(ArchKind kind);
ArchKind parse_kind(std::string_view name);
const std::vector<ArchKind>& pooling_kinds();
bool is_pooling(ArchKind kind);

struct ArchitectureSpec {
  ArchKind kind = ArchKind::ConvPooling;
  EncoderConfig encoder;
  /// Fully connected widths after the encoder (ReLU + dropout each).
  std::vector<int> fc_widths{64, 64};
  int num_classes = 8;
  /// Clip length the network is built for; only LocalPooling's parameter
  /// shapes depend on it.
  int frames = 16;
  int temporal_window = 10;
  int temporal_stride = 5;
  int tdc_channels = 16;
  int lstm_layers = 5;
  int lstm_hidden = 32;
  /// Encoder parameters are held fixed during training when set.
  bool freeze_encoder = false;

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Checks kind-specific constraints (feature tap, widths, window sizes).
void validate(const ArchitectureSpec& spec);

/// Builds a spec for `kind` on top of `encoder`, setting the feature tap the
/// kind requires. LatePooling moves `fc_widths` into the encoder so they are
/// applied per frame before pooling.
ArchitectureSpec make_spec(ArchKind kind, EncoderConfig encoder, int num_classes, int frames,
                           std::vector<int> fc_widths = {64, 64});

StackSpec stack_spec(const ArchitectureSpec& spec);

ParamSet init_params(const ArchitectureSpec& spec, std::uint64_t seed);

/// Window starts for the windowed stages. Clips shorter than the window are
/// padded first (one window at 0). When the stride leaves trailing frames
/// uncovered, a final window anchored at frames - window is appended.
std::vector<int> window_starts(int frames, int window, int stride);

/// Repeats frames from the start until at least `min_frames` are present.
std::vector<Tensor> pad_frames(std::span<const Tensor> frames, int min_frames);

int local_window_count(const ArchitectureSpec& spec);

struct LogitsOutput {
  Var logits;
  /// One entry per time step for Lstm; empty otherwise.
  std::vector<Var> per_frame_logits;
  /// Intermediate activations (pooled features, window outputs) for tests.
  std::vector<Var> aux;
};

/// Parameter binding that treats encoder weights as constants when the spec
/// freezes the encoder.
ParamBinding make_binding(Tape& tape, const ArchitectureSpec& spec, const ParamSet& params);

LogitsOutput forward_conv_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                  Mode mode, Rng& rng);
LogitsOutput forward_late_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                  Mode mode, Rng& rng);
LogitsOutput forward_slow_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                  Mode mode, Rng& rng);
LogitsOutput forward_local_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                   Mode mode, Rng& rng);
LogitsOutput forward_time_domain_conv(ParamBinding& bind, const ArchitectureSpec& spec,
                                      std::span<const Tensor> frames, Mode mode, Rng& rng);
LogitsOutput forward_inception_tap_pooling(ParamBinding& bind, const ArchitectureSpec& spec,
                                           std::span<const Tensor> frames, Mode mode, Rng& rng);
LogitsOutput forward_lstm(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames, Mode mode,
                          Rng& rng);

/// Dispatches on spec.kind.
LogitsOutput forward(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames, Mode mode,
                     Rng& rng);

/// Cross-entropy for pooling kinds; gain-weighted per-frame cross-entropy
/// (linear 0..1 schedule) for Lstm.
Var training_loss(const ArchitectureSpec& spec, const LogitsOutput& out, int label);

}  // namespace snagg
