#include "snagg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace snagg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_long(key, v)); }

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& item : split(v, ',')) out.push_back(to_int(key, item));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split(v, ',')) out.push_back(to_double(key, item));
  return out;
}

std::string join_ints(const std::vector<int>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + std::to_string(v[i]);
  return out;
}

/// Tracks which keys were consumed so leftovers can be reported.
class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  const std::string* find(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  const std::string& require(const std::string& key) {
    if (const std::string* v = find(key)) return *v;
    throw ConfigError("missing required config key '" + key + "'");
  }
  template <typename T, typename Parse>
  void opt(const std::string& key, T& target, Parse parse) {
    if (const std::string* v = find(key)) target = parse(key, *v);
  }
  void real(const std::string& key, double& t) { opt(key, t, to_double); }
  void integer(const std::string& key, int& t) { opt(key, t, to_int); }
  void integer(const std::string& key, long& t) { opt(key, t, to_long); }
  void flag(const std::string& key, bool& t) { opt(key, t, to_bool); }

  void reject_unknown() const {
    for (const auto& [key, value] : kv_)
      if (!used_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

std::string tap_name(FeatureTap t) { return t == FeatureTap::LastConv ? "last_conv" : "last_fc"; }

FeatureTap parse_tap(const std::string& key, const std::string& v) {
  if (v == "last_conv") return FeatureTap::LastConv;
  if (v == "last_fc") return FeatureTap::LastFc;
  throw ConfigError("config key '" + key + "': expected last_conv or last_fc, got '" + v + "'");
}

template <typename F>
auto wrap_parameter_errors(const std::string& key, F f) {
  try {
    return f();
  } catch (const ParameterError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), file.string());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_spec(const ArchitectureSpec& spec, KeyValues& kv) {
  const EncoderConfig& e = spec.encoder;
  kv["model.kind"] = std::string(kind_name(spec.kind));
  kv["model.encoder.input"] = join_ints({e.input.channels, e.input.height, e.input.width}, "x");
  std::string conv;
  for (const ConvLayerConfig& l : e.conv_layers)
    conv += (conv.empty() ? "" : ",") + join_ints({l.out_channels, l.kernel_size, l.stride, l.pool_k, l.pool_stride}, ":");
  kv["model.encoder.conv"] = conv;
  kv["model.encoder.global_avg_pool"] = e.global_avg_pool ? "true" : "false";
  kv["model.encoder.fc"] = join_ints(e.fc_layers);
  kv["model.encoder.dropout"] = format_double(e.dropout_ratio);
  kv["model.encoder.tap"] = tap_name(e.feature_tap);
  std::string mean;
  for (double m : e.input_mean) mean += (mean.empty() ? "" : ",") + format_double(m);
  kv["model.encoder.input_mean"] = mean;
  kv["model.fc"] = join_ints(spec.fc_widths);
  kv["model.num_classes"] = std::to_string(spec.num_classes);
  kv["model.frames"] = std::to_string(spec.frames);
  kv["model.temporal_window"] = std::to_string(spec.temporal_window);
  kv["model.temporal_stride"] = std::to_string(spec.temporal_stride);
  kv["model.tdc_channels"] = std::to_string(spec.tdc_channels);
  kv["model.lstm_layers"] = std::to_string(spec.lstm_layers);
  kv["model.lstm_hidden"] = std::to_string(spec.lstm_hidden);
  kv["model.freeze_encoder"] = spec.freeze_encoder ? "true" : "false";
}

ArchitectureSpec read_spec(const KeyValues& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  };
  ArchitectureSpec spec;
  spec.kind = wrap_parameter_errors("model.kind", [&] { return parse_kind(get("model.kind")); });
  EncoderConfig& e = spec.encoder;
  const std::vector<std::string> dims = split(get("model.encoder.input"), 'x');
  if (dims.size() != 3) throw ConfigError("model.encoder.input: expected CxHxW");
  e.input = {to_int("model.encoder.input", dims[0]), to_int("model.encoder.input", dims[1]),
             to_int("model.encoder.input", dims[2])};
  for (const std::string& layer : split(get("model.encoder.conv"), ',')) {
    const std::vector<int> f = to_ints("model.encoder.conv", [&] {
      std::string s = layer;
      std::replace(s.begin(), s.end(), ':', ',');
      return s;
    }());
    if (f.size() != 5) throw ConfigError("model.encoder.conv: each layer needs out:kernel:stride:pool_k:pool_stride");
    e.conv_layers.push_back({f[0], f[1], f[2], f[3], f[4]});
  }
  e.global_avg_pool = to_bool("model.encoder.global_avg_pool", get("model.encoder.global_avg_pool"));
  e.fc_layers = to_ints("model.encoder.fc", get("model.encoder.fc"));
  e.dropout_ratio = to_double("model.encoder.dropout", get("model.encoder.dropout"));
  e.feature_tap = parse_tap("model.encoder.tap", get("model.encoder.tap"));
  if (auto it = kv.find("model.encoder.input_mean"); it != kv.end())
    e.input_mean = to_doubles("model.encoder.input_mean", it->second);
  spec.fc_widths = to_ints("model.fc", get("model.fc"));
  spec.num_classes = to_int("model.num_classes", get("model.num_classes"));
  spec.frames = to_int("model.frames", get("model.frames"));
  spec.temporal_window = to_int("model.temporal_window", get("model.temporal_window"));
  spec.temporal_stride = to_int("model.temporal_stride", get("model.temporal_stride"));
  spec.tdc_channels = to_int("model.tdc_channels", get("model.tdc_channels"));
  spec.lstm_layers = to_int("model.lstm_layers", get("model.lstm_layers"));
  spec.lstm_hidden = to_int("model.lstm_hidden", get("model.lstm_hidden"));
  spec.freeze_encoder = to_bool("model.freeze_encoder", get("model.freeze_encoder"));
  wrap_parameter_errors("model", [&] {
    validate(spec);
    return 0;
  });
  return spec;
}

void write_augment(const AugmentConfig& cfg, KeyValues& kv) {
  kv["augment.frames"] = std::to_string(cfg.frames);
  kv["augment.resize_height"] = std::to_string(cfg.resize_height);
  kv["augment.resize_width"] = std::to_string(cfg.resize_width);
  kv["augment.crop_height"] = std::to_string(cfg.crop_height);
  kv["augment.crop_width"] = std::to_string(cfg.crop_width);
  kv["augment.flip"] = cfg.flip ? "true" : "false";
}

AugmentConfig read_augment(const KeyValues& kv, AugmentConfig cfg) {
  auto opt_int = [&](const std::string& key, int& t) {
    if (auto it = kv.find(key); it != kv.end()) t = to_int(key, it->second);
  };
  opt_int("augment.frames", cfg.frames);
  opt_int("augment.resize_height", cfg.resize_height);
  opt_int("augment.resize_width", cfg.resize_width);
  opt_int("augment.crop_height", cfg.crop_height);
  opt_int("augment.crop_width", cfg.crop_width);
  if (auto it = kv.find("augment.flip"); it != kv.end()) cfg.flip = to_bool("augment.flip", it->second);
  return cfg;
}

RunConfig parse_run_config(const KeyValues& kv, bool need_model) {
  Reader r(kv);
  RunConfig rc;
  rc.seed = static_cast<std::uint64_t>(to_long("seed", r.require("seed")));
  if (const std::string* v = r.find("stream")) {
    if (*v != "image" && *v != "flow" && *v != "two_stream")
      throw ConfigError("config key 'stream': expected image, flow or two_stream, got '" + *v + "'");
    rc.stream = *v;
  }
  if (const std::string* v = r.find("output.dir")) rc.output_dir = *v;

  TaskConfig& t = rc.task;
  t.seed = rc.seed;
  if (const std::string* v = r.find("dataset.path")) rc.dataset_path = *v;
  if (const std::string* v = r.find("dataset.task"))
    t.task = wrap_parameter_errors("dataset.task", [&] { return parse_task(*v); });
  r.integer("dataset.num_classes", t.num_classes);
  r.integer("dataset.frames", t.frames);
  r.integer("dataset.channels", t.channels);
  r.integer("dataset.height", t.height);
  r.integer("dataset.width", t.width);
  r.real("dataset.noise_sigma", t.noise_sigma);
  r.integer("dataset.train_videos", t.train_videos);
  r.integer("dataset.test_videos", t.test_videos);
  r.real("dataset.speed", t.speed);
  r.integer("dataset.flow_ratio", t.flow_ratio);
  r.integer("dataset.flow_iterations", t.flow_iterations);
  r.real("dataset.flow_smoothness", t.flow_smoothness);

  OptimizerConfig& o = rc.optimizer;
  r.real("optimizer.base_lr", o.base_lr);
  r.real("optimizer.momentum", o.momentum);
  r.real("optimizer.weight_decay", o.weight_decay);
  r.real("optimizer.lr_decay_factor", o.lr_decay_factor);
  r.integer("optimizer.decay_interval_steps", o.decay_interval_steps);
  r.flag("optimizer.lstm_lr_scale_by_frames", o.lstm_lr_scale_by_frames);

  TrainOptions& tr = rc.train;
  r.integer("train.batch_size", tr.batch_size);
  r.integer("train.max_steps", tr.max_steps);
  if (const std::string* v = r.find("train.target_loss")) tr.target_loss = to_double("train.target_loss", *v);
  r.integer("train.threads", tr.threads);
  r.integer("train.eval_every", tr.eval_every);
  r.integer("train.checkpoint_every", tr.checkpoint_every);

  int model_frames = t.frames;
  r.integer("model.frames", model_frames);
  AugmentConfig& a = tr.augment;
  a.frames = model_frames;
  r.integer("augment.frames", a.frames);
  r.integer("augment.resize_height", a.resize_height);
  r.integer("augment.resize_width", a.resize_width);
  r.integer("augment.crop_height", a.crop_height);
  r.integer("augment.crop_width", a.crop_width);
  r.flag("augment.flip", a.flip);

  PredictOptions& p = rc.predict;
  p.augment = a;
  r.integer("eval.num_samples", p.num_samples);
  if (const std::string* v = r.find("eval.fusion"))
    p.fusion = wrap_parameter_errors("eval.fusion", [&] { return parse_fusion(*v); });
  r.real("eval.two_stream_weight", rc.two_stream_weight);

  if (need_model || r.find("model.kind")) {
    const ArchKind kind = wrap_parameter_errors("model.kind", [&] { return parse_kind(r.require("model.kind")); });
    const int in_h = a.crop_height > 0 ? a.crop_height : a.resize_height > 0 ? a.resize_height : t.height;
    const int in_w = a.crop_width > 0 ? a.crop_width : a.resize_width > 0 ? a.resize_width : t.width;
    const int channels = rc.stream == "flow" ? 3 : t.channels;
    EncoderConfig enc = wrap_parameter_errors(
        "model.encoder", [&] { return preset(r.require("model.encoder"), InputShape{channels, in_h, in_w}); });
    r.real("model.dropout", enc.dropout_ratio);
    r.opt("model.input_mean", enc.input_mean, to_doubles);
    std::vector<int> fc{64, 64};
    r.opt("model.fc", fc, to_ints);
    int classes = t.num_classes;
    r.integer("model.num_classes", classes);
    rc.spec = wrap_parameter_errors("model", [&] { return make_spec(kind, enc, classes, model_frames, fc); });
    r.integer("model.temporal_window", rc.spec.temporal_window);
    r.integer("model.temporal_stride", rc.spec.temporal_stride);
    r.integer("model.tdc_channels", rc.spec.tdc_channels);
    r.integer("model.lstm_layers", rc.spec.lstm_layers);
    r.integer("model.lstm_hidden", rc.spec.lstm_hidden);
    r.flag("model.freeze_encoder", rc.spec.freeze_encoder);
    wrap_parameter_errors("model", [&] {
      validate(rc.spec);
      return 0;
    });
  }
  r.reject_unknown();
  wrap_parameter_errors("optimizer", [&] {
    validate(rc.optimizer);
    validate(rc.train);
    return 0;
  });
  return rc;
}

}  // namespace snagg
