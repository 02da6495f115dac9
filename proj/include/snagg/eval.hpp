#pragma once

#include "snagg/dataset.hpp"
#include "snagg/model.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace snagg {

enum class FusionStrategy { LastStep, MaxPool, SumThenMax, WeightedSum };

std::string_view fusion_name(FusionStrategy s);
FusionStrategy parse_fusion(std::string_view name);

/// Combines per-frame class distributions into one distribution. MaxPool,
/// SumThenMax and WeightedSum renormalize their result; WeightedSum needs one
/// gain per frame.
Vector fuse_predictions(std::span<const Vector> per_frame_probs, FusionStrategy strategy,
                        std::span<const double> gain = {});

/// Indices of the k largest entries, larger values first, lower index first on ties.
std::vector<int> top_k(const Vector& probs, int k);

/// Fraction of samples whose top-k classes contain at least one label.
double hit_at_k(std::span<const Vector> predictions, std::span<const std::vector<int>> labels, int k);

/// Sampling geometry shared by every frame of a clip. A zero resize or crop
/// extent leaves that axis at the stored size.
struct AugmentConfig {
  int frames = 16;
  int resize_height = 40;
  int resize_width = 40;
  int crop_height = 32;
  int crop_width = 32;
  bool flip = true;
};

struct AugmentDraw {
  int start = 0;
  int crop_y = 0;
  int crop_x = 0;
  bool flip = false;
};

/// One start offset, one crop corner and one flip decision, drawn in that order.
AugmentDraw draw_augment(const VideoSample& video, const AugmentConfig& cfg, Rng& rng);
/// Start 0, centred crop, no flip.
AugmentDraw center_draw(const VideoSample& video, const AugmentConfig& cfg);
std::vector<Tensor> apply_augment(const VideoSample& video, const AugmentConfig& cfg, const AugmentDraw& draw);
VideoSample augment_sample(const VideoSample& video, const AugmentConfig& cfg, Rng& rng);

/// Corner-aligned bilinear resize: output (i, j) samples the input at
/// (i*(H-1)/(H'-1), j*(W-1)/(W'-1)), or 0 along an axis of output length 1,
/// and blends the four neighbours as
///   (1-fy)*((1-fx)*p00 + fx*p01) + fy*((1-fx)*p10 + fx*p11).
Tensor resize_bilinear(const Tensor& frame, int height, int width);
Tensor crop(const Tensor& frame, int y, int x, int height, int width);
Tensor flip_horizontal(const Tensor& frame);

/// Class distribution for one clip in inference mode. Lstm models fuse their
/// per-frame softmax outputs with `fusion` (WeightedSum uses the gain schedule).
Vector predict_clip(const ArchitectureSpec& spec, const ParamSet& params, std::span<const Tensor> frames,
                    FusionStrategy fusion = FusionStrategy::SumThenMax);

struct PredictOptions {
  /// Number of augmented clips to average; 0 runs one pass over the whole video.
  int num_samples = 8;
  FusionStrategy fusion = FusionStrategy::SumThenMax;
  AugmentConfig augment;
};

/// Mean of `num_samples` clip distributions, each from a fresh draw_augment.
Vector video_predict(const ArchitectureSpec& spec, const ParamSet& params, const VideoSample& video,
                     const PredictOptions& opts, Rng& rng);

/// weight * image + (1 - weight) * flow.
Vector two_stream_fuse(const Vector& image_probs, const Vector& flow_probs, double weight = 0.5);

struct EvalReport {
  std::string method;
  int frames = 0;
  double clip_hit1 = 0;
  double hit1 = 0;
  double hit5 = 0;
  std::vector<double> per_class_accuracy;
  int num_samples = 0;
};

/// Per-video distributions at clip level (first `frames` frames, centred,
/// unflipped) and video level (video_predict).
struct StreamPredictions {
  std::vector<Vector> clip;
  std::vector<Vector> video;
  std::vector<std::vector<int>> labels;
  std::vector<std::string> video_ids;
};

/// Augmentation draws for video i come from Rng::derive(seed, "augment/eval", i).
StreamPredictions predict_dataset(const ArchitectureSpec& spec, const ParamSet& params, const Dataset& data,
                                  const PredictOptions& opts, std::uint64_t seed);

/// Hit@1 / Hit@k with k = min(5, K), per-class video-level accuracy.
EvalReport make_report(const std::string& method, int frames, const StreamPredictions& preds, int num_classes);

/// Convex combination of two aligned prediction sets (matched by video id).
StreamPredictions fuse_streams(const StreamPredictions& image, const StreamPredictions& flow, double weight);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const EvalReport& report);

}  // namespace snagg
