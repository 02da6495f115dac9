#pragma once

#include "snagg/dataset.hpp"
#include "snagg/eval.hpp"
#include "snagg/model.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace snagg {

struct OptimizerConfig {
  double base_lr = 1e-5;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lr_decay_factor = 0.95;
  int decay_interval_steps = 1000;
  /// Multiplies the rate by the clip length N for Lstm models.
  bool lstm_lr_scale_by_frames = false;
};

void validate(const OptimizerConfig& cfg);

/// base_lr * (N if scaled) * factor^floor(step / interval).
double learning_rate(const OptimizerConfig& cfg, long step, int frames = 1);

/// Frame count used for learning-rate scaling of `spec`.
int lr_frames(const ArchitectureSpec& spec, const OptimizerConfig& cfg);

struct TrainState {
  long step = 0;
  ParamSet params;
  ParamSet velocity;
  /// Every random draw of a run is derived from this seed and the example index.
  std::uint64_t seed = 0;
  double current_lr = 0.0;
};

TrainState make_state(ParamSet params, const OptimizerConfig& cfg, std::uint64_t seed, int frames = 1);

/// Raised when training produces non-finite values.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step, std::string last_checkpoint)
      : Error(what), step_(step), last_checkpoint_(std::move(last_checkpoint)) {}

  long step() const { return step_; }
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  long step_;
  std::string last_checkpoint_;
};

/// v <- momentum*v - lr*(g + weight_decay*w); w <- w + v, using the rate for
/// state.step, then advances the step. Parameters without a gradient entry
/// (frozen ones) are left untouched.
void sgd_momentum_step(TrainState& state, const ParamSet& grads, const OptimizerConfig& cfg, int frames = 1);

/// g_t = t / (T - 1) for t = 0 .. T-1; [1] when T = 1.
std::vector<double> gain_schedule(int frames);

/// Spec for the same network built for `target_frames` frames.
ArchitectureSpec expanded_spec(const ArchitectureSpec& src, int target_frames);

/// Parameters for `target`, which may differ from `src` only in frame count.
/// Everything is copied; LocalPooling's output weight is rebuilt by summing
/// the source window blocks and tiling that sum / new_window_count.
ParamSet expand_network(const ArchitectureSpec& src, const ParamSet& params, const ArchitectureSpec& target);
ParamSet expand_network(const ArchitectureSpec& src, const ParamSet& params, int target_frames);

struct ExampleGradient {
  double loss = 0.0;
  ParamSet grads;
};

/// Loss and parameter gradients for one clip in training mode.
ExampleGradient example_gradient(const ArchitectureSpec& spec, const ParamSet& params, std::span<const Tensor> frames,
                                 int label, Rng& dropout_rng);

struct MetricRecord {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> eval_hit1;
};

struct TrainOptions {
  int batch_size = 8;
  long max_steps = 1000;
  /// Stops once a step's mean batch loss is at or below this value.
  std::optional<double> target_loss;
  AugmentConfig augment;
  int threads = 1;
  /// Clip-level Hit@1 on `eval_data` every `eval_every` steps (0 disables).
  int eval_every = 0;
  const Dataset* eval_data = nullptr;
  int checkpoint_every = 0;
  /// Persists a state and returns a reference to it (e.g. a path).
  std::function<std::string(const TrainState&)> checkpoint;
  std::function<void(const MetricRecord&)> on_record;
};

void validate(const TrainOptions& opts);

struct TrainResult {
  TrainState state;
  std::vector<MetricRecord> log;
};

/// Runs from state.step to opts.max_steps. Example i = step*batch + b is
/// video order[i mod N] of epoch i / N, where order = shuffled_order(N, seed,
/// epoch); its augmentation and dropout draw from Rng::derive(seed,
/// "augment" / "dropout", i). Resuming from a saved state therefore
/// continues the exact same trajectory.
TrainResult train_loop(const Dataset& data, const ArchitectureSpec& spec, const OptimizerConfig& cfg,
                       const TrainOptions& opts, TrainState state);

/// Fresh run: parameters from init_params(spec, seed).
TrainResult train_loop(const Dataset& data, const ArchitectureSpec& spec, const OptimizerConfig& cfg,
                       const TrainOptions& opts, std::uint64_t seed);

/// Columns step, loss, lr, eval_hit1 with round-trip precision.
void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& log);

/// Clip-level Hit@1 with centred, unflipped clips.
double clip_accuracy(const ArchitectureSpec& spec, const ParamSet& params, const Dataset& data,
                     const AugmentConfig& augment);

}  // namespace snagg
