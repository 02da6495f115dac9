#include "helpers.hpp"

#include "snagg/dataset.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <numbers>

using namespace snagg;
using namespace snagg::test;
namespace fs = std::filesystem;

namespace {

TaskConfig task(Task t, int classes = 4) {
  TaskConfig c;
  c.task = t;
  c.num_classes = classes;
  c.frames = 8;
  c.channels = 1;
  c.height = 24;
  c.width = 24;
  c.train_videos = 24;
  c.test_videos = 8;
  c.seed = 5;
  return c;
}

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

// Integer toroidal shift (dy, dx) in [-3, 3] that best maps frame a onto frame b.
std::pair<int, int> best_shift(const Tensor& a, const Tensor& b) {
  const int h = a.dim(1), w = a.dim(2);
  double best = INFINITY;
  std::pair<int, int> arg{0, 0};
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      double ssd = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d = b[static_cast<std::size_t>(((y + dy + h) % h) * w + (x + dx + w) % w)] -
                           a[static_cast<std::size_t>(y * w + x)];
          ssd += d * d;
        }
      if (ssd < best) best = ssd, arg = {dy, dx};
    }
  return arg;
}

std::pair<double, double> centroid(const Tensor& f) {
  const int h = f.dim(1), w = f.dim(2);
  double m = 0, sy = 0, sx = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = std::max(0.0, f[static_cast<std::size_t>(y * w + x)] - 0.3);
      m += v, sy += v * y, sx += v * x;
    }
  return {sy / m, sx / m};
}

}  // namespace

TEST_CASE("generation is deterministic to the byte") {
  for (Task t : {Task::ShapeIdentity, Task::MotionDirection, Task::OrderPair}) {
    CAPTURE(task_name(t));
    TempDir a("gen_a"), b("gen_b");
    TaskConfig cfg = task(t);
    cfg.flow_ratio = t == Task::MotionDirection ? 2 : 0;
    cfg.flow_iterations = 20;
    write_dataset(a.path, generate(cfg));
    write_dataset(b.path, generate(cfg));
    const auto ta = tree_bytes(a.path), tb = tree_bytes(b.path);
    CHECK(ta.size() > 1);
    CHECK(ta == tb);
    cfg.seed = 6;
    TempDir c("gen_c");
    write_dataset(c.path, generate(cfg));
    CHECK(tree_bytes(c.path) != ta);
  }
}

TEST_CASE("round trip and manifest") {
  TaskConfig cfg = task(Task::ShapeIdentity);
  const DatasetContents gen = generate(cfg);
  TempDir dir("roundtrip");
  write_dataset(dir.path, gen);
  const DatasetContents back = read_dataset(dir.path);
  REQUIRE(back.entries.size() == gen.entries.size());
  CHECK(back.num_classes == 4);
  CHECK(back.task == "shape_identity");
  for (std::size_t i = 0; i < gen.entries.size(); ++i) {
    const auto& g = gen.entries[i].sample;
    const auto& r = back.entries[i].sample;
    CHECK(g.video_id == r.video_id);
    CHECK(g.labels == r.labels);
    REQUIRE(g.frames.size() == r.frames.size());
    for (std::size_t t = 0; t < g.frames.size(); ++t) CHECK(identical(g.frames[t], r.frames[t]));
  }
  const Dataset test = load(dir.path, "test");
  CHECK(test.videos.size() == 8);
  CHECK(test.videos.front().video_id == "test_00000");
  for (const auto& v : test.videos)
    for (const auto& f : v.frames) {
      CHECK(f.data.minCoeff() >= 0.0);
      CHECK(f.data.maxCoeff() <= 1.0);
      CHECK(f.shape == Shape{1, 24, 24});
    }

  std::map<int, int> histogram;
  for (const auto& v : load(dir.path, "train").videos) ++histogram[v.label()];
  CHECK(histogram == std::map<int, int>{{0, 6}, {1, 6}, {2, 6}, {3, 6}});

  const std::string manifest = slurp(dir / "manifest.json");
  for (const char* key : {"\"video_id\"", "\"labels\"", "\"stream\"", "\"dtype\"", "\"shape\"", "\"path\"", "\"crc32\""})
    CHECK(manifest.find(key) != std::string::npos);
}

TEST_CASE("raster file layout") {
  TempDir dir("raster");
  Tensor a({1, 1, 2}, {0.25, 1.0});
  Tensor b({1, 1, 2}, {0.5, 0.0});
  write_video(dir / "v.snv", {a, b});
  const std::string bytes = slurp(dir / "v.snv");
  REQUIRE(bytes.size() == 8 + 16 + 4 * 4);
  CHECK(bytes.substr(0, 8) == "SNVID001");
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 1);
  CHECK(bytes[16] == 1);
  CHECK(bytes[20] == 2);
  float first;
  std::memcpy(&first, bytes.data() + 24, 4);
  CHECK(first == 0.25f);
  const auto back = read_video(dir / "v.snv");
  CHECK(identical(back[0], a));
  CHECK(identical(back[1], b));
}

TEST_CASE("corruption is detected") {
  TempDir dir("corrupt");
  write_dataset(dir.path, generate(task(Task::OrderPair)));
  const fs::path victim = dir / "image/train_00003.snv";
  std::string bytes = slurp(victim);

  SUBCASE("flipped byte") {
    bytes[40] = static_cast<char>(bytes[40] ^ 0x10);
    std::ofstream(victim, std::ios::binary) << bytes;
    try {
      read_dataset(dir.path);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("train_00003.snv") != std::string::npos);
    }
  }
  SUBCASE("truncated payload") {
    std::ofstream(victim, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_AS(read_dataset(dir.path), DataError);
    CHECK_THROWS_AS(read_video(victim), DataError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    std::ofstream(victim, std::ios::binary) << bytes;
    CHECK_THROWS_AS(read_video(victim), DataError);
  }
  SUBCASE("missing file") {
    fs::remove(victim);
    CHECK_THROWS_AS(read_dataset(dir.path), IoError);
  }
  SUBCASE("existing directory needs force") {
    CHECK_THROWS_AS(write_dataset(dir.path, generate(task(Task::OrderPair))), IoError);
    CHECK_NOTHROW(write_dataset(dir.path, generate(task(Task::OrderPair)), true));
  }
}

TEST_CASE("frame selection repeats from the start") {
  VideoSample v{"v", {}, {0}};
  for (int i = 0; i < 7; ++i) v.frames.push_back(Tensor::scalar(i));
  std::vector<double> got;
  for (const Tensor& t : select_frames(v, 0, 10)) got.push_back(t[0]);
  CHECK(got == std::vector<double>{0, 1, 2, 3, 4, 5, 6, 0, 1, 2});
  got.clear();
  for (const Tensor& t : select_frames(v, 5, 4)) got.push_back(t[0]);
  CHECK(got == std::vector<double>{5, 6, 0, 1});
  CHECK_THROWS_AS(select_frames(v, 0, 0), ParameterError);
}

TEST_CASE("epoch order") {
  const auto a = shuffled_order(50, 9, 0);
  CHECK(a == shuffled_order(50, 9, 0));
  CHECK(a != shuffled_order(50, 9, 1));
  CHECK(a != shuffled_order(50, 10, 0));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("motion direction follows the class angle") {
  TaskConfig cfg = task(Task::MotionDirection, 4);
  cfg.height = cfg.width = 32;
  cfg.train_videos = 16;
  const Dataset d = select(generate(cfg), "train");
  std::map<int, std::pair<double, double>> mean;
  for (const auto& v : d.videos)
    for (std::size_t t = 0; t + 1 < v.frames.size(); ++t) {
      const auto [dy, dx] = best_shift(v.frames[t], v.frames[t + 1]);
      mean[v.label()].first += dy;
      mean[v.label()].second += dx;
    }
  for (const auto& [label, m] : mean) {
    CAPTURE(label);
    const double expected = 2 * std::numbers::pi * label / 4;
    double delta = std::abs(std::remainder(std::atan2(m.first, m.second) - expected, 2 * std::numbers::pi));
    CHECK(delta < std::numbers::pi / 4);
  }
}

TEST_CASE("order pairs are temporal reversals") {
  TaskConfig cfg = task(Task::OrderPair, 8);
  cfg.noise_sigma = 0.0;
  cfg.train_videos = 64;
  const Dataset d = select(generate(cfg), "train");
  // mean centroid path per class
  std::map<int, std::vector<std::pair<double, double>>> path;
  std::map<int, int> count;
  for (const auto& v : d.videos) {
    auto& p = path[v.label()];
    p.resize(v.frames.size());
    for (std::size_t t = 0; t < v.frames.size(); ++t) {
      const auto c = centroid(v.frames[t]);
      p[t].first += c.first;
      p[t].second += c.second;
    }
    ++count[v.label()];
  }
  for (int c = 0; c < 8; c += 2) {
    CAPTURE(c);
    const auto& fwd = path[c];
    const auto& rev = path[c + 1];
    double worst = 0, travel = 0;
    for (std::size_t t = 0; t < fwd.size(); ++t) {
      const std::size_t r = fwd.size() - 1 - t;
      worst = std::max(worst, std::hypot(fwd[t].first / count[c] - rev[r].first / count[c + 1],
                                         fwd[t].second / count[c] - rev[r].second / count[c + 1]));
    }
    travel = std::hypot(fwd.front().first - fwd.back().first, fwd.front().second - fwd.back().second) / count[c];
    CHECK(worst < 1.5);
    if (c / 2 != 4 && c / 2 != 5) CHECK(travel > 5.0);
  }

  SUBCASE("reversing an odd-label clip restores left-to-right travel") {
    const auto& v = d.videos[1];
    CHECK(v.label() == 1);
    auto frames = v.frames;
    std::reverse(frames.begin(), frames.end());
    CHECK(centroid(frames.front()).second < centroid(frames.back()).second);
  }
}

TEST_CASE("flow stream entries") {
  TaskConfig cfg = task(Task::MotionDirection);
  cfg.flow_ratio = 2;
  cfg.flow_iterations = 10;
  cfg.train_videos = 4;
  cfg.test_videos = 1;
  const DatasetContents c = generate(cfg);
  const Dataset image = select(c, "train"), flow = select(c, "train", "flow");
  REQUIRE(flow.videos.size() == image.videos.size());
  for (std::size_t i = 0; i < image.videos.size(); ++i) {
    CHECK(flow.videos[i].video_id == image.videos[i].video_id);
    CHECK(flow.videos[i].frames.size() == image.videos[i].frames.size());
    CHECK(flow.videos[i].frames[0].shape == Shape{3, 24, 24});
  }
}

TEST_CASE("config validation and stored precision") {
  TaskConfig cfg = task(Task::ShapeIdentity);
  cfg.num_classes = 1;
  CHECK_THROWS_AS(generate(cfg), ParameterError);
  CHECK(parse_task("order_pair") == Task::OrderPair);
  CHECK_THROWS_AS(parse_task("sports1m"), ParameterError);
  Tensor t({2}, {0.1, 1.0 / 3.0});
  quantize(t);
  CHECK(t[0] == static_cast<double>(0.1f));
  CHECK(t[1] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}
