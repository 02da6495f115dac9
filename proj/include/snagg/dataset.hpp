#pragma once

#include "snagg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace snagg {

enum class Task { ShapeIdentity, MotionDirection, OrderPair };

std::string task_name(Task task);
Task parse_task(const std::string& name);

struct TaskConfig {
  Task task = Task::ShapeIdentity;
  int num_classes = 8;
  int frames = 16;
  int channels = 3;
  int height = 32;
  int width = 32;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  int train_videos = 256;
  int test_videos = 64;
  /// Displacement in pixels per stored frame (motion and trajectory tasks).
  double speed = 1.5;
  /// Raw sub-frames rendered per stored frame. Values >= 2 also emit a
  /// "flow" stream computed between the first two sub-frames of each step.
  int flow_ratio = 0;
  int flow_iterations = 100;
  double flow_smoothness = 0.1;
};

void validate(const TaskConfig& cfg);

/// One video: frames are [C x H x W] tensors with values in [0, 1].
struct VideoSample {
  std::string video_id;
  std::vector<Tensor> frames;
  std::vector<int> labels;

  /// First (primary) label, used as the training target.
  int label() const;
};

struct Dataset {
  std::vector<VideoSample> videos;
  int num_classes = 0;
  std::string stream = "image";
};

struct DatasetEntry {
  std::string split;
  std::string stream;
  VideoSample sample;
};

struct DatasetContents {
  std::string task;
  int num_classes = 0;
  std::vector<DatasetEntry> entries;
};

/// Deterministic in-memory generation; bytes on disk depend only on `cfg`.
DatasetContents generate(const TaskConfig& cfg);

/// Writes manifest.json plus one raster file per entry. An existing
/// non-empty directory is an error unless `force` is set.
void write_dataset(const std::filesystem::path& dir, const DatasetContents& contents, bool force = false);

/// Reads every entry, verifying CRC32 and payload sizes.
DatasetContents read_dataset(const std::filesystem::path& dir);

/// Entries of one split and stream, in manifest order.
Dataset load(const std::filesystem::path& dir, const std::string& split, const std::string& stream = "image");
Dataset select(const DatasetContents& contents, const std::string& split, const std::string& stream = "image");

/// Raster file: "SNVID001", u32 LE T, C, H, W, then float32 LE values.
void write_video(const std::filesystem::path& file, const std::vector<Tensor>& frames);
std::vector<Tensor> read_video(const std::filesystem::path& file);

/// `count` frames starting at `start`, wrapping to frame 0 past the end.
std::vector<Tensor> select_frames(const VideoSample& video, int start, int count);

/// Example order for one epoch: a seeded permutation of [0, n).
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Rounds every value through float32, as stored on disk.
void quantize(Tensor& t);

}  // namespace snagg
