#include "snagg/eval.hpp"

#include "snagg/ops.hpp"
#include "snagg/training.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

namespace snagg {
namespace {

Vector normalized(Vector v) {
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  if (!(s > 0)) throw NumericError("fuse_predictions: fused mass is not positive");
  return v / s;
}

int stored_or(int requested, int stored) { return requested > 0 ? requested : stored; }

}  // namespace

std::string_view fusion_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::LastStep: return "last_step";
    case FusionStrategy::MaxPool: return "max_pool";
    case FusionStrategy::SumThenMax: return "sum_then_max";
    case FusionStrategy::WeightedSum: return "weighted_sum";
  }
  return "unknown";
}

FusionStrategy parse_fusion(std::string_view name) {
  for (FusionStrategy s : {FusionStrategy::LastStep, FusionStrategy::MaxPool, FusionStrategy::SumThenMax,
                           FusionStrategy::WeightedSum})
    if (fusion_name(s) == name) return s;
  throw ParameterError("unknown fusion strategy '" + std::string(name) +
                       "' (known: last_step, max_pool, sum_then_max, weighted_sum)");
}

Vector fuse_predictions(std::span<const Vector> per_frame_probs, FusionStrategy strategy,
                        std::span<const double> gain) {
  if (per_frame_probs.empty()) throw ParameterError("fuse_predictions: empty trace");
  const Eigen::Index k = per_frame_probs.front().size();
  for (const Vector& p : per_frame_probs)
    if (p.size() != k) throw DimensionError("fuse_predictions: frames disagree on the class count");
  switch (strategy) {
    case FusionStrategy::LastStep: return per_frame_probs.back();
    case FusionStrategy::MaxPool: {
      Vector m = per_frame_probs.front();
      for (const Vector& p : per_frame_probs.subspan(1)) m = m.cwiseMax(p);
      return normalized(m);
    }
    case FusionStrategy::SumThenMax: {
      Vector s = Vector::Zero(k);
      for (const Vector& p : per_frame_probs) s += p;
      return normalized(s);
    }
    case FusionStrategy::WeightedSum: {
      if (gain.size() != per_frame_probs.size())
        throw ParameterError("fuse_predictions: weighted_sum needs " + std::to_string(per_frame_probs.size()) +
                             " gains, got " + std::to_string(gain.size()));
      Vector s = Vector::Zero(k);
      for (std::size_t t = 0; t < gain.size(); ++t) s += gain[t] * per_frame_probs[t];
      return normalized(s);
    }
  }
  throw ContractError("fuse_predictions: unhandled strategy");
}

std::vector<int> top_k(const Vector& probs, int k) {
  if (k < 1 || k > probs.size())
    throw ParameterError("top_k: k = " + std::to_string(k) + " outside [1, " + std::to_string(probs.size()) + "]");
  std::vector<int> idx(static_cast<std::size_t>(probs.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

double hit_at_k(std::span<const Vector> predictions, std::span<const std::vector<int>> labels, int k) {
  if (predictions.empty()) throw ParameterError("hit_at_k: no samples");
  if (predictions.size() != labels.size())
    throw DimensionError("hit_at_k: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " label sets");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i].empty()) throw ParameterError("hit_at_k: sample " + std::to_string(i) + " has no labels");
    const std::vector<int> top = top_k(predictions[i], k);
    hits += std::any_of(top.begin(), top.end(), [&](int c) {
      return std::find(labels[i].begin(), labels[i].end(), c) != labels[i].end();
    });
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

Tensor resize_bilinear(const Tensor& frame, int height, int width) {
  if (frame.rank() != 3) throw DimensionError("resize: expected [C x H x W], got " + to_string(frame.shape));
  if (height < 1 || width < 1) throw ParameterError("resize: target size must be positive");
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  Tensor out({c, height, width});
  auto src = [](int i, int n_out, int n_in) {
    return n_out == 1 ? 0.0 : static_cast<double>(i) * (n_in - 1) / (n_out - 1);
  };
  for (int y = 0; y < height; ++y) {
    const double sy = src(y, height, h);
    const int y0 = std::min(static_cast<int>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = src(x, width, w);
      const int x0 = std::min(static_cast<int>(sx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int k = 0; k < c; ++k) {
        auto at = [&](int r, int q) {
          return frame[(static_cast<std::size_t>(k) * h + static_cast<std::size_t>(r)) * w + static_cast<std::size_t>(q)];
        };
        out[(static_cast<std::size_t>(k) * height + static_cast<std::size_t>(y)) * width + static_cast<std::size_t>(x)] =
            (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& frame, int y, int x, int height, int width) {
  if (frame.rank() != 3) throw DimensionError("crop: expected [C x H x W], got " + to_string(frame.shape));
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  if (height < 1 || width < 1 || y < 0 || x < 0 || y + height > h || x + width > w)
    throw ParameterError("crop: region " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                         std::to_string(y) + "," + std::to_string(x) + ") exceeds " + std::to_string(h) + "x" +
                         std::to_string(w));
  Tensor out({c, height, width});
  for (int k = 0; k < c; ++k)
    for (int r = 0; r < height; ++r)
      for (int q = 0; q < width; ++q)
        out[(static_cast<std::size_t>(k) * height + r) * width + q] =
            frame[(static_cast<std::size_t>(k) * h + (y + r)) * w + (x + q)];
  return out;
}

Tensor flip_horizontal(const Tensor& frame) {
  if (frame.rank() != 3) throw DimensionError("flip: expected [C x H x W], got " + to_string(frame.shape));
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  Tensor out(frame.shape);
  for (int k = 0; k < c; ++k)
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q)
        out[(static_cast<std::size_t>(k) * h + r) * w + q] = frame[(static_cast<std::size_t>(k) * h + r) * w + (w - 1 - q)];
  return out;
}

namespace {

struct Geometry {
  int resize_h, resize_w, crop_h, crop_w;
};

Geometry geometry(const VideoSample& video, const AugmentConfig& cfg) {
  if (video.frames.empty()) throw DataError("video '" + video.video_id + "' has no frames");
  if (cfg.frames < 1) throw ParameterError("augment: clip length must be at least 1");
  const Tensor& f = video.frames.front();
  if (f.rank() != 3) throw DimensionError("augment: frames must be [C x H x W]");
  Geometry g;
  g.resize_h = stored_or(cfg.resize_height, f.dim(1));
  g.resize_w = stored_or(cfg.resize_width, f.dim(2));
  g.crop_h = stored_or(cfg.crop_height, g.resize_h);
  g.crop_w = stored_or(cfg.crop_width, g.resize_w);
  if (g.crop_h > g.resize_h || g.crop_w > g.resize_w)
    throw ParameterError("augment: crop " + std::to_string(g.crop_h) + "x" + std::to_string(g.crop_w) +
                         " is larger than the frame " + std::to_string(g.resize_h) + "x" + std::to_string(g.resize_w));
  return g;
}

}  // namespace

AugmentDraw draw_augment(const VideoSample& video, const AugmentConfig& cfg, Rng& rng) {
  const Geometry g = geometry(video, cfg);
  const int stored = static_cast<int>(video.frames.size());
  AugmentDraw d;
  d.start = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, stored - cfg.frames + 1))));
  d.crop_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.resize_h - g.crop_h + 1)));
  d.crop_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.resize_w - g.crop_w + 1)));
  d.flip = cfg.flip && rng.bernoulli(0.5);
  return d;
}

AugmentDraw center_draw(const VideoSample& video, const AugmentConfig& cfg) {
  const Geometry g = geometry(video, cfg);
  return {0, (g.resize_h - g.crop_h) / 2, (g.resize_w - g.crop_w) / 2, false};
}

std::vector<Tensor> apply_augment(const VideoSample& video, const AugmentConfig& cfg, const AugmentDraw& draw) {
  const Geometry g = geometry(video, cfg);
  std::vector<Tensor> frames = select_frames(video, draw.start, cfg.frames);
  for (Tensor& f : frames) {
    if (f.dim(1) != g.resize_h || f.dim(2) != g.resize_w) f = resize_bilinear(f, g.resize_h, g.resize_w);
    if (g.crop_h != g.resize_h || g.crop_w != g.resize_w) f = crop(f, draw.crop_y, draw.crop_x, g.crop_h, g.crop_w);
    if (draw.flip) f = flip_horizontal(f);
  }
  return frames;
}

VideoSample augment_sample(const VideoSample& video, const AugmentConfig& cfg, Rng& rng) {
  const AugmentDraw d = draw_augment(video, cfg, rng);
  return {video.video_id, apply_augment(video, cfg, d), video.labels};
}

Vector predict_clip(const ArchitectureSpec& spec, const ParamSet& params, std::span<const Tensor> frames,
                    FusionStrategy fusion) {
  Tape tape;
  ParamBinding bind(tape, params, [](const std::string&) { return false; });
  Rng unused(0);
  const LogitsOutput out = forward(bind, spec, frames, Mode::Infer, unused);
  if (spec.kind != ArchKind::Lstm) return softmax(out.logits.value().data);
  std::vector<Vector> probs;
  for (Var l : out.per_frame_logits) probs.push_back(softmax(l.value().data));
  const std::vector<double> gains = gain_schedule(static_cast<int>(probs.size()));
  return fuse_predictions(probs, fusion, gains);
}

Vector video_predict(const ArchitectureSpec& spec, const ParamSet& params, const VideoSample& video,
                     const PredictOptions& opts, Rng& rng) {
  if (opts.num_samples < 0) throw ParameterError("video_predict: num_samples must be >= 0");
  if (opts.num_samples == 0) {
    AugmentConfig whole = opts.augment;
    whole.frames = static_cast<int>(video.frames.size());
    return predict_clip(spec, params, apply_augment(video, whole, center_draw(video, whole)), opts.fusion);
  }
  Vector sum;
  for (int s = 0; s < opts.num_samples; ++s) {
    const AugmentDraw d = draw_augment(video, opts.augment, rng);
    Vector p = predict_clip(spec, params, apply_augment(video, opts.augment, d), opts.fusion);
    if (s == 0)
      sum = std::move(p);
    else
      sum += p;
  }
  return sum / opts.num_samples;
}

Vector two_stream_fuse(const Vector& image_probs, const Vector& flow_probs, double weight) {
  if (image_probs.size() != flow_probs.size())
    throw DimensionError("two_stream_fuse: " + std::to_string(image_probs.size()) + " vs " +
                         std::to_string(flow_probs.size()) + " classes");
  if (weight < 0 || weight > 1) throw ParameterError("two_stream_fuse: weight must lie in [0, 1]");
  return weight * image_probs + (1 - weight) * flow_probs;
}

StreamPredictions predict_dataset(const ArchitectureSpec& spec, const ParamSet& params, const Dataset& data,
                                  const PredictOptions& opts, std::uint64_t seed) {
  StreamPredictions out;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const VideoSample& v = data.videos[i];
    out.clip.push_back(
        predict_clip(spec, params, apply_augment(v, opts.augment, center_draw(v, opts.augment)), opts.fusion));
    Rng rng = Rng::derive(seed, "augment/eval", i);
    out.video.push_back(video_predict(spec, params, v, opts, rng));
    out.labels.push_back(v.labels);
    out.video_ids.push_back(v.video_id);
  }
  return out;
}

EvalReport make_report(const std::string& method, int frames, const StreamPredictions& preds, int num_classes) {
  EvalReport r;
  r.method = method;
  r.frames = frames;
  r.num_samples = static_cast<int>(preds.video.size());
  const int k = std::min(5, num_classes);
  r.clip_hit1 = hit_at_k(preds.clip, preds.labels, 1);
  r.hit1 = hit_at_k(preds.video, preds.labels, 1);
  r.hit5 = hit_at_k(preds.video, preds.labels, k);
  if (r.hit1 > r.hit5) throw ContractError("eval: hit@1 exceeds hit@" + std::to_string(k));
  std::vector<int> correct(static_cast<std::size_t>(num_classes)), total(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < preds.video.size(); ++i) {
    const auto c = static_cast<std::size_t>(preds.labels[i].front());
    ++total[c];
    correct[c] += top_k(preds.video[i], 1).front() == preds.labels[i].front();
  }
  for (int c = 0; c < num_classes; ++c)
    r.per_class_accuracy.push_back(total[static_cast<std::size_t>(c)] == 0
                                       ? 0.0
                                       : static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                                             total[static_cast<std::size_t>(c)]);
  return r;
}

StreamPredictions fuse_streams(const StreamPredictions& image, const StreamPredictions& flow, double weight) {
  std::map<std::string, std::size_t> flow_index;
  for (std::size_t i = 0; i < flow.video_ids.size(); ++i) flow_index[flow.video_ids[i]] = i;
  StreamPredictions out;
  for (std::size_t i = 0; i < image.video_ids.size(); ++i) {
    auto it = flow_index.find(image.video_ids[i]);
    if (it == flow_index.end()) throw DataError("two-stream: no flow prediction for '" + image.video_ids[i] + "'");
    out.clip.push_back(two_stream_fuse(image.clip[i], flow.clip[it->second], weight));
    out.video.push_back(two_stream_fuse(image.video[i], flow.video[it->second], weight));
    out.labels.push_back(image.labels[i]);
    out.video_ids.push_back(image.video_ids[i]);
  }
  return out;
}

void write_csv_header(std::ostream& out) { out << "method,frames,clip_hit1,hit1,hit5\n"; }

void write_csv_row(std::ostream& out, const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f", r.frames, r.clip_hit1, r.hit1, r.hit5);
  out << r.method << ',' << buf << '\n';
}

}  // namespace snagg
