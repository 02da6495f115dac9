#include "snagg/dataset.hpp"

#include "snagg/flow.hpp"
#include "snagg/rng.hpp"

#include <json.hpp>
#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

namespace snagg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kVideoMagic[8] = {'S', 'N', 'V', 'I', 'D', '0', '0', '1'};
constexpr double kBackground = 0.1;

struct Canvas {
  int channels, height, width;
  std::vector<double> tint;

  Tensor blank() const { return Tensor::filled({channels, height, width}, kBackground); }

  void put(Tensor& frame, int y, int x, double value) const {
    const std::size_t plane = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    const std::size_t i = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    for (int c = 0; c < channels; ++c) frame[static_cast<std::size_t>(c) * plane + i] = value * tint[static_cast<std::size_t>(c)];
  }
};

Canvas make_canvas(const TaskConfig& cfg, Rng& rng) {
  Canvas cv{cfg.channels, cfg.height, cfg.width, {}};
  for (int c = 0; c < cfg.channels; ++c) cv.tint.push_back(cfg.channels == 1 ? 1.0 : rng.uniform(0.7, 1.0));
  return cv;
}

void add_noise(Tensor& frame, double sigma, Rng& rng) {
  for (auto& v : frame.data) {
    if (sigma > 0) v += sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
  }
  quantize(frame);
}

int raw_ratio(const TaskConfig& cfg) { return std::max(1, cfg.flow_ratio); }

// ---- shape_identity

using Glyph = std::array<std::array<bool, 5>, 5>;

std::vector<Glyph> make_glyphs(const TaskConfig& cfg) {
  std::vector<Glyph> glyphs;
  for (int k = 0; k < cfg.num_classes; ++k) {
    Rng rng = Rng::derive(cfg.seed, "glyph", static_cast<std::uint64_t>(k));
    for (;;) {
      Glyph g{};
      int on = 0;
      for (auto& row : g)
        for (auto& cell : row) on += (cell = rng.bernoulli(0.5));
      if (on < 8) continue;
      bool distinct = true;
      for (const Glyph& other : glyphs) {
        int diff = 0;
        for (int r = 0; r < 5; ++r)
          for (int c = 0; c < 5; ++c) diff += g[r][c] != other[r][c];
        distinct = distinct && diff >= 4;
      }
      if (distinct) {
        glyphs.push_back(g);
        break;
      }
    }
  }
  return glyphs;
}

std::vector<Tensor> render_shape(const TaskConfig& cfg, const Glyph& glyph, Rng& rng) {
  const Canvas cv = make_canvas(cfg, rng);
  const int cell = std::max(1, std::min(cfg.height, cfg.width) / 8);
  const int size = 5 * cell;
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.height - size + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.width - size + 1)));
  const double ink = rng.uniform(0.7, 1.0);
  std::vector<Tensor> frames;
  for (int t = 0; t < cfg.frames * raw_ratio(cfg); ++t) {
    const int y = std::clamp(y0 + static_cast<int>(rng.below(3)) - 1, 0, cfg.height - size);
    const int x = std::clamp(x0 + static_cast<int>(rng.below(3)) - 1, 0, cfg.width - size);
    Tensor f = cv.blank();
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (glyph[r / cell][c / cell]) cv.put(f, y + r, x + c, ink);
    add_noise(f, cfg.noise_sigma, rng);
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---- motion_direction

std::vector<Tensor> render_motion(const TaskConfig& cfg, int label, Rng& rng) {
  const Canvas cv = make_canvas(cfg, rng);
  const int side = std::max(3, std::min(cfg.height, cfg.width) * 3 / 8);
  std::vector<double> texture(static_cast<std::size_t>(side * side));
  for (auto& t : texture) t = rng.uniform(0.4, 1.0);
  auto texel = [&](int r, int c) {
    if (r < 0 || c < 0 || r >= side || c >= side) return kBackground;
    return texture[static_cast<std::size_t>(r * side + c)];
  };
  const double angle = 2.0 * std::numbers::pi * label / cfg.num_classes;
  const double step = cfg.speed / raw_ratio(cfg);
  const double vx = step * std::cos(angle), vy = step * std::sin(angle);
  const double px0 = rng.uniform(0.0, cfg.width), py0 = rng.uniform(0.0, cfg.height);
  // offset of pixel coordinate q from the square's corner p on a ring of length n, in [-n/2, n/2)
  auto wrap = [](double q, double p, int n) {
    double d = std::fmod(q - p, static_cast<double>(n));
    if (d < -n / 2.0) d += n;
    if (d >= n / 2.0) d -= n;
    return d;
  };
  std::vector<Tensor> frames;
  for (int t = 0; t < cfg.frames * raw_ratio(cfg); ++t) {
    const double px = px0 + vx * t, py = py0 + vy * t;
    Tensor f = cv.blank();
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const double ly = wrap(y, py, cfg.height), lx = wrap(x, px, cfg.width);
        if (ly <= -1.0 || lx <= -1.0 || ly >= side || lx >= side) continue;
        const int r = static_cast<int>(std::floor(ly)), c = static_cast<int>(std::floor(lx));
        const double fy = ly - r, fx = lx - c;
        const double v = (1 - fy) * ((1 - fx) * texel(r, c) + fx * texel(r, c + 1)) +
                         fy * ((1 - fx) * texel(r + 1, c) + fx * texel(r + 1, c + 1));
        cv.put(f, y, x, v);
      }
    }
    add_noise(f, cfg.noise_sigma, rng);
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---- order_pair

struct Point {
  double y, x;
};

Point trajectory(int type, double s, double h, double w, double margin) {
  const double top = margin, bottom = h - 1 - margin, left = margin, right = w - 1 - margin;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ry = (bottom - top) / 2.0, rx = (right - left) / 2.0;
  switch (type) {
    case 0: return {cy, left + s * (right - left)};
    case 1: return {top + s * (bottom - top), cx};
    case 2: return {top + s * (bottom - top), left + s * (right - left)};
    case 3: return {top + s * (bottom - top), right - s * (right - left)};
    case 4: return {cy - ry * std::sin(std::numbers::pi * s), cx - rx * std::cos(std::numbers::pi * s)};
    case 5: return {cy + ry * std::sin(std::numbers::pi * s), cx - rx * std::cos(std::numbers::pi * s)};
    case 6: return {top + (bottom - top) / 4.0, left + s * (right - left)};
    default: return {top + s * (bottom - top), left + (right - left) / 4.0};
  }
}

std::vector<Tensor> render_order(const TaskConfig& cfg, int label, Rng& rng) {
  const Canvas cv = make_canvas(cfg, rng);
  const double radius = std::max(1.5, std::min(cfg.height, cfg.width) / 8.0);
  const double jy = rng.uniform(-1.0, 1.0), jx = rng.uniform(-1.0, 1.0);
  const double ink = rng.uniform(0.7, 1.0);
  const int n = cfg.frames * raw_ratio(cfg);
  std::vector<Tensor> frames;
  for (int t = 0; t < n; ++t) {
    const double s = n == 1 ? 0.0 : static_cast<double>(t) / (n - 1);
    const Point p = trajectory(label / 2, s, cfg.height, cfg.width, radius + 1.0);
    Tensor f = cv.blank();
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const double d = std::hypot(y - (p.y + jy), x - (p.x + jx));
        const double a = std::clamp(radius + 0.5 - d, 0.0, 1.0);
        if (a > 0) cv.put(f, y, x, kBackground + a * (ink - kBackground));
      }
    }
    add_noise(f, cfg.noise_sigma, rng);
    frames.push_back(std::move(f));
  }
  if (label % 2 == 1) std::reverse(frames.begin(), frames.end());
  return frames;
}

std::vector<Tensor> every_nth(const std::vector<Tensor>& raw, int n) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < raw.size(); i += static_cast<std::size_t>(n)) out.push_back(raw[i]);
  return out;
}

// ---- raster files

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::string encode_video(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw ParameterError("write_video: no frames");
  const Shape& fs = frames.front().shape;
  if (fs.size() != 3) throw DimensionError("write_video: frames must be [C x H x W], got " + to_string(fs));
  std::string out(kVideoMagic, sizeof kVideoMagic);
  put_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (int d : fs) put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * frames.size() * numel(fs));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape != fs)
      throw DimensionError("write_video: frame " + std::to_string(t) + " has shape " + to_string(frames[t].shape));
    for (double v : frames[t].data) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

std::vector<Tensor> decode_video(const std::string& bytes, const std::string& name) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 24 || std::memcmp(p, kVideoMagic, sizeof kVideoMagic) != 0)
    throw DataError(name + ": not a video raster (bad magic or header)");
  const std::uint32_t t = get_u32(p + 8);
  const Shape shape{static_cast<int>(get_u32(p + 12)), static_cast<int>(get_u32(p + 16)),
                    static_cast<int>(get_u32(p + 20))};
  if (t == 0 || shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0) throw DataError(name + ": empty raster header");
  const std::size_t per_frame = numel(shape);
  if (bytes.size() != 24 + 4 * per_frame * t)
    throw DataError(name + ": payload holds " + std::to_string(bytes.size() - 24) + " bytes, header implies " +
                    std::to_string(4 * per_frame * t));
  std::vector<Tensor> frames;
  const unsigned char* q = p + 24;
  for (std::uint32_t f = 0; f < t; ++f) {
    Tensor frame(shape);
    for (std::size_t i = 0; i < per_frame; ++i, q += 4) {
      const std::uint32_t bits = get_u32(q);
      float v;
      std::memcpy(&v, &bits, sizeof v);
      frame[i] = v;
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + file.string());
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string task_name(Task task) {
  switch (task) {
    case Task::ShapeIdentity: return "shape_identity";
    case Task::MotionDirection: return "motion_direction";
    case Task::OrderPair: return "order_pair";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::ShapeIdentity, Task::MotionDirection, Task::OrderPair})
    if (task_name(t) == name) return t;
  throw ParameterError("unknown task '" + name + "' (known: shape_identity, motion_direction, order_pair)");
}

void validate(const TaskConfig& cfg) {
  if (cfg.num_classes < 2) throw ParameterError("dataset: num_classes must be at least 2");
  if (cfg.frames < 1) throw ParameterError("dataset: frames must be at least 1");
  if (cfg.channels < 1 || cfg.height < 8 || cfg.width < 8)
    throw ParameterError("dataset: frames must have a channel and be at least 8x8");
  if (cfg.noise_sigma < 0) throw ParameterError("dataset: noise_sigma must be non-negative");
  if (cfg.train_videos < 0 || cfg.test_videos < 0 || cfg.train_videos + cfg.test_videos == 0)
    throw ParameterError("dataset: split sizes must be non-negative and not both zero");
  if (cfg.flow_ratio < 0 || cfg.flow_ratio == 1)
    throw ParameterError("dataset: flow_ratio must be 0 (no flow stream) or at least 2");
  if (cfg.task == Task::OrderPair && (cfg.num_classes % 2 != 0 || cfg.num_classes > 16))
    throw ParameterError("order_pair: num_classes must be even and at most 16");
}

int VideoSample::label() const {
  if (labels.empty()) throw DataError("video '" + video_id + "' has no labels");
  return labels.front();
}

void quantize(Tensor& t) {
  for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

DatasetContents generate(const TaskConfig& cfg) {
  validate(cfg);
  DatasetContents out;
  out.task = task_name(cfg.task);
  out.num_classes = cfg.num_classes;
  const std::vector<Glyph> glyphs = cfg.task == Task::ShapeIdentity ? make_glyphs(cfg) : std::vector<Glyph>{};
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", cfg.train_videos}, {"test", cfg.test_videos}}) {
    for (int i = 0; i < count; ++i) {
      const int label = i % cfg.num_classes;
      Rng rng = Rng::derive(cfg.seed, "video/" + split, static_cast<std::uint64_t>(i));
      std::vector<Tensor> raw;
      switch (cfg.task) {
        case Task::ShapeIdentity: raw = render_shape(cfg, glyphs[static_cast<std::size_t>(label)], rng); break;
        case Task::MotionDirection: raw = render_motion(cfg, label, rng); break;
        case Task::OrderPair: raw = render_order(cfg, label, rng); break;
      }
      char id[32];
      std::snprintf(id, sizeof id, "%s_%05d", split.c_str(), i);
      VideoSample image{id, every_nth(raw, raw_ratio(cfg)), {label}};
      out.entries.push_back({split, "image", image});
      if (cfg.flow_ratio >= 2) {
        VideoSample flow = flow_video({id, raw, {label}}, cfg.flow_ratio, cfg.flow_iterations, cfg.flow_smoothness);
        out.entries.push_back({split, "flow", std::move(flow)});
      }
    }
  }
  return out;
}

void write_video(const fs::path& file, const std::vector<Tensor>& frames) { write_file(file, encode_video(frames)); }

std::vector<Tensor> read_video(const fs::path& file) { return decode_video(read_file(file), file.string()); }

void write_dataset(const fs::path& dir, const DatasetContents& contents, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_empty(dir, ec) && !force)
    throw IoError("dataset directory " + dir.string() + " already exists (use --force to overwrite)");
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json entries = json::array();
  for (const DatasetEntry& e : contents.entries) {
    const std::string rel = e.stream + "/" + e.sample.video_id + ".snv";
    fs::create_directories(dir / e.stream, ec);
    if (ec) throw IoError("cannot create " + (dir / e.stream).string() + ": " + ec.message());
    const std::string bytes = encode_video(e.sample.frames);
    write_file(dir / rel, bytes);
    const Shape& fs0 = e.sample.frames.front().shape;
    entries.push_back({{"video_id", e.sample.video_id},
                       {"split", e.split},
                       {"labels", e.sample.labels},
                       {"stream", e.stream},
                       {"dtype", "f32"},
                       {"shape", {static_cast<int>(e.sample.frames.size()), fs0[0], fs0[1], fs0[2]}},
                       {"path", rel},
                       {"crc32", crc_of(bytes)}});
  }
  json manifest = {{"format", "snagg-dataset"},
                   {"version", 1},
                   {"task", contents.task},
                   {"num_classes", contents.num_classes},
                   {"entries", entries}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetContents read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  DatasetContents out;
  try {
    out.task = manifest.value("task", std::string{});
    out.num_classes = manifest.at("num_classes").get<int>();
    for (const json& e : manifest.at("entries")) {
      DatasetEntry entry;
      entry.split = e.at("split").get<std::string>();
      entry.stream = e.at("stream").get<std::string>();
      entry.sample.video_id = e.at("video_id").get<std::string>();
      entry.sample.labels = e.at("labels").get<std::vector<int>>();
      const auto rel = e.at("path").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32") throw DataError(rel + ": unsupported dtype");
      const std::string bytes = read_file(dir / rel);
      if (crc_of(bytes) != e.at("crc32").get<std::uint32_t>()) throw DataError(rel + ": CRC32 mismatch");
      entry.sample.frames = decode_video(bytes, rel);
      const auto shape = e.at("shape").get<std::vector<int>>();
      const Shape& fs0 = entry.sample.frames.front().shape;
      if (shape != std::vector<int>{static_cast<int>(entry.sample.frames.size()), fs0[0], fs0[1], fs0[2]})
        throw DataError(rel + ": raster shape disagrees with the manifest");
      if (entry.sample.labels.empty()) throw DataError(rel + ": entry has no labels");
      for (int l : entry.sample.labels)
        if (l < 0 || l >= out.num_classes) throw DataError(rel + ": label " + std::to_string(l) + " out of range");
      out.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  return out;
}

Dataset select(const DatasetContents& contents, const std::string& split, const std::string& stream) {
  Dataset d;
  d.num_classes = contents.num_classes;
  d.stream = stream;
  for (const DatasetEntry& e : contents.entries)
    if (e.split == split && e.stream == stream) d.videos.push_back(e.sample);
  return d;
}

Dataset load(const fs::path& dir, const std::string& split, const std::string& stream) {
  return select(read_dataset(dir), split, stream);
}

std::vector<Tensor> select_frames(const VideoSample& video, int start, int count) {
  if (video.frames.empty()) throw DataError("video '" + video.video_id + "' has no frames");
  if (count < 1 || start < 0) throw ParameterError("select_frames: need start >= 0 and count >= 1");
  const std::size_t n = video.frames.size();
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::size_t idx = static_cast<std::size_t>(start + i);
    out.push_back(video.frames[idx < n ? idx : (idx - n) % n]);
  }
  return out;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, "data", epoch);
  rng.shuffle(order);
  return order;
}

}  // namespace snagg
