#include "snagg/model.hpp"

#include "snagg/ops.hpp"
#include "snagg/training.hpp"

#include <algorithm>
#include <cmath>

namespace snagg {
namespace {

struct KindName {
  ArchKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {ArchKind::ConvPooling, "conv_pooling"},
    {ArchKind::LatePooling, "late_pooling"},
    {ArchKind::SlowPooling, "slow_pooling"},
    {ArchKind::LocalPooling, "local_pooling"},
    {ArchKind::TimeDomainConv, "time_domain_conv"},
    {ArchKind::InceptionTapPooling, "inception_tap_pooling"},
    {ArchKind::Lstm, "lstm"},
};

std::string fc_name(std::size_t i, const char* what) { return "fc" + std::to_string(i) + "." + what; }

// ReLU + dropout layers fc{first}..fc{first + count - 1}
Var fc_stack(ParamBinding& bind, const ArchitectureSpec& spec, Var x, std::size_t first, std::size_t count, Mode mode,
             Rng& rng) {
  const double keep = 1.0 - spec.encoder.dropout_ratio;
  for (std::size_t i = first; i < first + count; ++i) {
    x = relu(linear(bind(fc_name(i, "weight")), x, bind(fc_name(i, "bias"))));
    x = dropout(x, keep, rng, mode == Mode::Train);
  }
  return x;
}

Var output_layer(ParamBinding& bind, Var x) { return linear(bind("out.weight"), x, bind("out.bias")); }

void require_kind(const ArchitectureSpec& spec, ArchKind kind) {
  if (spec.kind != kind)
    throw ContractError("forward_" + std::string(kind_name(kind)) + " called with a " +
                        std::string(kind_name(spec.kind)) + " spec");
}

void require_frames(std::span<const Tensor> frames) {
  if (frames.empty()) throw ParameterError("forward: a clip needs at least one frame");
}

std::vector<Var> window_maxima(std::span<const Var> features, const ArchitectureSpec& spec) {
  std::vector<Var> out;
  for (int start : window_starts(static_cast<int>(features.size()), spec.temporal_window, spec.temporal_stride))
    out.push_back(temporal_max_pool(features.subspan(static_cast<std::size_t>(start),
                                                     static_cast<std::size_t>(spec.temporal_window))));
  return out;
}

void add_dense(ParamSet& params, const std::string& prefix, int in, int out, double limit, Rng& rng) {
  params[prefix + ".weight"] = uniform_tensor({out, in}, limit, rng);
  params[prefix + ".bias"] = Tensor({out});
}

// features after the windowed first stage are padded to at least one window
std::vector<Var> padded_features(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                 Mode mode, Rng& rng) {
  const std::vector<Tensor> padded = pad_frames(frames, spec.temporal_window);
  return encode_frames(bind, spec.encoder, padded, mode, rng).per_frame;
}

}  // namespace

std::string_view kind_name(ArchKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.name;
  return "unknown";
}

ArchKind parse_kind(std::string_view name) {
  for (const auto& k : kKindNames)
    if (k.name == name) return k.kind;
  std::string known;
  for (const auto& k : kKindNames) known += (known.empty() ? "" : ", ") + std::string(k.name);
  throw ParameterError("unknown architecture kind '" + std::string(name) + "' (known: " + known + ")");
}

const std::vector<ArchKind>& pooling_kinds() {
  static const std::vector<ArchKind> kinds{ArchKind::ConvPooling,  ArchKind::LatePooling,
                                           ArchKind::SlowPooling,  ArchKind::LocalPooling,
                                           ArchKind::TimeDomainConv, ArchKind::InceptionTapPooling};
  return kinds;
}

bool is_pooling(ArchKind kind) { return kind != ArchKind::Lstm; }

void validate(const ArchitectureSpec& spec) {
  validate(spec.encoder);
  if (spec.num_classes < 1) throw ParameterError("architecture: num_classes must be at least 1");
  if (spec.frames < 1) throw ParameterError("architecture: frames must be at least 1");
  for (int w : spec.fc_widths)
    if (w < 1) throw ParameterError("architecture: fully connected widths must be positive");
  const bool conv_tap = spec.encoder.feature_tap == FeatureTap::LastConv;
  const Shape tap = feature_shape(spec.encoder);
  switch (spec.kind) {
    case ArchKind::ConvPooling:
    case ArchKind::SlowPooling:
    case ArchKind::LocalPooling:
    case ArchKind::TimeDomainConv:
      if (!conv_tap || tap.size() != 3)
        throw ParameterError(std::string(kind_name(spec.kind)) + " requires the encoder tap at the last conv map");
      break;
    case ArchKind::LatePooling:
    case ArchKind::InceptionTapPooling:
      if (conv_tap || tap.size() != 1)
        throw ParameterError(std::string(kind_name(spec.kind)) + " requires a flat last_fc encoder tap");
      break;
    case ArchKind::Lstm:
      if (spec.lstm_layers < 1 || spec.lstm_hidden < 1)
        throw ParameterError("lstm: layers and hidden size must be positive");
      break;
  }
  if (spec.kind == ArchKind::SlowPooling || spec.kind == ArchKind::LocalPooling ||
      spec.kind == ArchKind::TimeDomainConv) {
    if (spec.temporal_window < 1 || spec.temporal_stride < 1)
      throw ParameterError("temporal window and stride must be positive");
  }
  if (spec.kind == ArchKind::SlowPooling && spec.fc_widths.empty())
    throw ParameterError("slow_pooling needs at least one fully connected width for the per-window layer");
  if (spec.kind == ArchKind::TimeDomainConv && spec.tdc_channels < 1)
    throw ParameterError("time_domain_conv: tdc_channels must be positive");
}

ArchitectureSpec make_spec(ArchKind kind, EncoderConfig encoder, int num_classes, int frames,
                           std::vector<int> fc_widths) {
  ArchitectureSpec spec;
  spec.kind = kind;
  spec.num_classes = num_classes;
  spec.frames = frames;
  spec.fc_widths = std::move(fc_widths);
  switch (kind) {
    case ArchKind::LatePooling:
      encoder.feature_tap = FeatureTap::LastFc;
      encoder.global_avg_pool = false;
      encoder.fc_layers = spec.fc_widths;
      spec.fc_widths.clear();
      break;
    case ArchKind::InceptionTapPooling:
      encoder.feature_tap = FeatureTap::LastFc;
      encoder.global_avg_pool = true;
      encoder.fc_layers.clear();
      break;
    case ArchKind::Lstm:
      spec.fc_widths.clear();
      break;
    default:
      encoder.feature_tap = FeatureTap::LastConv;
      encoder.global_avg_pool = false;
      break;
  }
  spec.encoder = std::move(encoder);
  validate(spec);
  return spec;
}

StackSpec stack_spec(const ArchitectureSpec& spec) {
  StackSpec s;
  s.num_layers = spec.lstm_layers;
  s.hidden_size = spec.lstm_hidden;
  s.num_classes = spec.num_classes;
  s.input_size = static_cast<int>(numel(feature_shape(spec.encoder)));
  return s;
}

std::vector<int> window_starts(int frames, int window, int stride) {
  if (window < 1 || stride < 1) throw ParameterError("window and stride must be positive");
  if (frames < 1) throw ParameterError("window_starts: no frames");
  if (frames <= window) return {0};
  std::vector<int> starts;
  for (int s = 0; s + window <= frames; s += stride) starts.push_back(s);
  if (starts.back() + window < frames) starts.push_back(frames - window);
  return starts;
}

std::vector<Tensor> pad_frames(std::span<const Tensor> frames, int min_frames) {
  if (frames.empty()) throw ParameterError("pad_frames: no frames to repeat");
  std::vector<Tensor> out(frames.begin(), frames.end());
  for (std::size_t i = 0; static_cast<int>(out.size()) < min_frames; ++i) out.push_back(frames[i % frames.size()]);
  return out;
}

int local_window_count(const ArchitectureSpec& spec) {
  return static_cast<int>(window_starts(spec.frames, spec.temporal_window, spec.temporal_stride).size());
}

ParamSet init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng = Rng::derive(seed, "init");
  ParamSet params;
  init_encoder(spec.encoder, params, rng);
  if (spec.kind == ArchKind::Lstm) {
    init_lstm_stack(stack_spec(spec), params, rng);
    return params;
  }
  const Shape tap = feature_shape(spec.encoder);
  int width = static_cast<int>(numel(tap));
  if (spec.kind == ArchKind::TimeDomainConv) {
    const int fan_in = spec.temporal_window * tap[0] * 9;
    params["tdc.weight"] = uniform_tensor({spec.tdc_channels, spec.temporal_window, tap[0], 3, 3},
                                          std::sqrt(6.0 / fan_in), rng);
    params["tdc.bias"] = Tensor({spec.tdc_channels});
    width = spec.tdc_channels * tap[1] * tap[2];
  }
  for (std::size_t i = 0; i < spec.fc_widths.size(); ++i) {
    add_dense(params, "fc" + std::to_string(i), width, spec.fc_widths[i], std::sqrt(6.0 / width), rng);
    width = spec.fc_widths[i];
  }
  if (spec.kind == ArchKind::LocalPooling) width *= local_window_count(spec);
  add_dense(params, "out", width, spec.num_classes, std::sqrt(6.0 / (width + spec.num_classes)), rng);
  return params;
}

ParamBinding make_binding(Tape& tape, const ArchitectureSpec& spec, const ParamSet& params) {
  if (!spec.freeze_encoder) return ParamBinding(tape, params);
  return ParamBinding(tape, params, [](const std::string& name) { return name.rfind("encoder.", 0) != 0; });
}

LogitsOutput forward_conv_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                  Mode mode, Rng& rng) {
  require_kind(spec, ArchKind::ConvPooling);
  require_frames(frames);
  const FrameFeatures features = encode_frames(bind, spec.encoder, frames, mode, rng);
  Var pooled = temporal_max_pool(features.per_frame);
  Var x = fc_stack(bind, spec, flatten(pooled), 0, spec.fc_widths.size(), mode, rng);
  return {output_layer(bind, x), {}, {pooled}};
}

LogitsOutput forward_late_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                  Mode mode, Rng& rng) {
  require_kind(spec, ArchKind::LatePooling);
  require_frames(frames);
  const FrameFeatures features = encode_frames(bind, spec.encoder, frames, mode, rng);
  Var pooled = temporal_max_pool(features.per_frame);
  Var x = fc_stack(bind, spec, pooled, 0, spec.fc_widths.size(), mode, rng);
  return {output_layer(bind, x), {}, {pooled}};
}

LogitsOutput forward_slow_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                  Mode mode, Rng& rng) {
  require_kind(spec, ArchKind::SlowPooling);
  require_frames(frames);
  const std::vector<Var> features = padded_features(bind, spec, frames, mode, rng);
  std::vector<Var> window_out;
  for (Var m : window_maxima(features, spec)) window_out.push_back(fc_stack(bind, spec, flatten(m), 0, 1, mode, rng));
  Var pooled = temporal_max_pool(window_out);
  Var x = fc_stack(bind, spec, pooled, 1, spec.fc_widths.size() - 1, mode, rng);
  LogitsOutput out{output_layer(bind, x), {}, window_out};
  out.aux.push_back(pooled);
  return out;
}

LogitsOutput forward_local_pooling(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames,
                                   Mode mode, Rng& rng) {
  require_kind(spec, ArchKind::LocalPooling);
  require_frames(frames);
  const std::vector<Var> features = padded_features(bind, spec, frames, mode, rng);
  std::vector<Var> window_out;
  for (Var m : window_maxima(features, spec))
    window_out.push_back(fc_stack(bind, spec, flatten(m), 0, spec.fc_widths.size(), mode, rng));
  const int expected = local_window_count(spec);
  if (static_cast<int>(window_out.size()) != expected)
    throw DimensionError("local_pooling: clip of " + std::to_string(frames.size()) + " frames gives " +
                         std::to_string(window_out.size()) + " windows, network was built for " +
                         std::to_string(expected));
  return {output_layer(bind, concat(window_out)), {}, window_out};
}

LogitsOutput forward_time_domain_conv(ParamBinding& bind, const ArchitectureSpec& spec,
                                      std::span<const Tensor> frames, Mode mode, Rng& rng) {
  require_kind(spec, ArchKind::TimeDomainConv);
  require_frames(frames);
  const std::vector<Var> features = padded_features(bind, spec, frames, mode, rng);
  Var responses = relu(conv3d_time(stack(features), bind("tdc.weight"), bind("tdc.bias"), spec.temporal_stride, 1));
  Var pooled = max_over_leading(responses);
  Var x = fc_stack(bind, spec, flatten(pooled), 0, spec.fc_widths.size(), mode, rng);
  return {output_layer(bind, x), {}, {responses, pooled}};
}

LogitsOutput forward_inception_tap_pooling(ParamBinding& bind, const ArchitectureSpec& spec,
                                           std::span<const Tensor> frames, Mode mode, Rng& rng) {
  require_kind(spec, ArchKind::InceptionTapPooling);
  require_frames(frames);
  const FrameFeatures features = encode_frames(bind, spec.encoder, frames, mode, rng);
  Var pooled = temporal_max_pool(features.per_frame);
  Var x = fc_stack(bind, spec, pooled, 0, spec.fc_widths.size(), mode, rng);
  return {output_layer(bind, x), {}, {pooled}};
}

LogitsOutput forward_lstm(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames, Mode mode,
                          Rng& rng) {
  require_kind(spec, ArchKind::Lstm);
  require_frames(frames);
  const FrameFeatures features = encode_frames(bind, spec.encoder, frames, mode, rng);
  std::vector<Var> logits = stack_forward(bind, stack_spec(spec), features.per_frame);
  LogitsOutput out;
  out.logits = logits.back();
  out.per_frame_logits = std::move(logits);
  return out;
}

LogitsOutput forward(ParamBinding& bind, const ArchitectureSpec& spec, std::span<const Tensor> frames, Mode mode,
                     Rng& rng) {
  switch (spec.kind) {
    case ArchKind::ConvPooling: return forward_conv_pooling(bind, spec, frames, mode, rng);
    case ArchKind::LatePooling: return forward_late_pooling(bind, spec, frames, mode, rng);
    case ArchKind::SlowPooling: return forward_slow_pooling(bind, spec, frames, mode, rng);
    case ArchKind::LocalPooling: return forward_local_pooling(bind, spec, frames, mode, rng);
    case ArchKind::TimeDomainConv: return forward_time_domain_conv(bind, spec, frames, mode, rng);
    case ArchKind::InceptionTapPooling: return forward_inception_tap_pooling(bind, spec, frames, mode, rng);
    case ArchKind::Lstm: return forward_lstm(bind, spec, frames, mode, rng);
  }
  throw ContractError("forward: unhandled architecture kind");
}

Var training_loss(const ArchitectureSpec& spec, const LogitsOutput& out, int label) {
  if (spec.kind != ArchKind::Lstm) return softmax_cross_entropy(out.logits, label);
  const std::vector<double> gains = gain_schedule(static_cast<int>(out.per_frame_logits.size()));
  return lstm_loss(out.per_frame_logits, label, gains);
}

}  // namespace snagg
