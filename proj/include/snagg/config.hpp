#pragma once

#include "snagg/dataset.hpp"
#include "snagg/eval.hpp"
#include "snagg/model.hpp"
#include "snagg/training.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace snagg {

/// Missing, unknown or malformed configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

using KeyValues = std::map<std::string, std::string>;

/// Flat UTF-8 `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed; a repeated key is
/// an error.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");
KeyValues read_key_values(const std::filesystem::path& file);
std::string format_key_values(const KeyValues& kv);

/// Round-trip formatting for doubles.
std::string format_double(double v);

/// Exact serialization of a spec under `model.*` keys.
void write_spec(const ArchitectureSpec& spec, KeyValues& kv);
ArchitectureSpec read_spec(const KeyValues& kv);

void write_augment(const AugmentConfig& cfg, KeyValues& kv);
AugmentConfig read_augment(const KeyValues& kv, AugmentConfig defaults);

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path dataset_path;
  TaskConfig task;
  ArchitectureSpec spec;
  OptimizerConfig optimizer;
  TrainOptions train;
  PredictOptions predict;
  double two_stream_weight = 0.5;
  std::filesystem::path output_dir;
  std::string stream = "image";
};

/// Reads every section. `seed` is mandatory; the model section is only
/// required when `need_model` is set. Keys outside the known set are errors.
///
///   seed, stream, output.dir
///   dataset.{path, task, num_classes, frames, channels, height, width,
///            noise_sigma, train_videos, test_videos, speed, flow_ratio,
///            flow_iterations, flow_smoothness}
///   model.{kind, encoder, fc, num_classes, frames, temporal_window,
///          temporal_stride, tdc_channels, lstm_layers, lstm_hidden,
///          freeze_encoder, dropout, input_mean}
///   optimizer.{base_lr, momentum, weight_decay, lr_decay_factor,
///              decay_interval_steps, lstm_lr_scale_by_frames}
///   train.{batch_size, max_steps, target_loss, threads, eval_every,
///          checkpoint_every}
///   augment.{frames, resize_height, resize_width, crop_height, crop_width, flip}
///   eval.{num_samples, fusion, two_stream_weight}
RunConfig parse_run_config(const KeyValues& kv, bool need_model);

}  // namespace snagg
