#include "snagg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace snagg {
namespace {

constexpr char kMagic[8] = {'S', 'N', 'A', 'G', 'G', '0', '0', '1'};
constexpr const char* kVelocity = "velocity/";

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& text, const std::string& source) {
  Shape s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, 'x')) {
    try {
      s.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw DataError(source + ": bad tensor shape '" + text + "'");
    }
  }
  if (s.empty()) throw DataError(source + ": empty tensor shape");
  return s;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  KeyValues meta = ckpt.extra;
  meta["format"] = "snagg-checkpoint";
  meta["step"] = std::to_string(ckpt.state.step);
  meta["seed"] = std::to_string(ckpt.state.seed);
  meta["current_lr"] = format_double(ckpt.state.current_lr);
  write_spec(ckpt.spec, meta);

  std::string manifest = format_key_values(meta);
  std::string payload;
  auto add = [&](const std::string& name, const Tensor& t) {
    const std::size_t offset = payload.size();
    for (double v : t.data) put_f64(payload, v);
    manifest += "tensor " + name + " f64 " + shape_text(t.shape) + " " + std::to_string(offset) + " " +
                std::to_string(payload.size() - offset) + "\n";
  };
  for (const auto& [name, t] : ckpt.state.params) add(name, t);
  for (const auto& [name, t] : ckpt.state.velocity) add(kVelocity + name, t);

  std::string out(kMagic, sizeof kMagic);
  const std::uint64_t len = manifest.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFFu));
  out += manifest;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(p, kMagic, sizeof kMagic) != 0)
    throw DataError(source + ": not a checkpoint (bad magic)");
  const std::uint64_t len = get_u64(p + 8);
  if (len > bytes.size() - 16) throw DataError(source + ": manifest length exceeds file size");
  const std::string manifest = bytes.substr(16, len);
  const std::size_t payload_start = 16 + len;
  const std::size_t payload_size = bytes.size() - payload_start;

  std::string meta_text;
  Checkpoint ckpt;
  std::stringstream ss(manifest);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.rfind("tensor ", 0) != 0) {
      meta_text += line + "\n";
      continue;
    }
    std::stringstream ls(line.substr(7));
    std::string name, dtype, shape;
    std::size_t offset = 0, nbytes = 0;
    if (!(ls >> name >> dtype >> shape >> offset >> nbytes) || dtype != "f64")
      throw DataError(source + ": malformed tensor line '" + line + "'");
    Tensor t(parse_shape(shape, source));
    if (nbytes != 8 * t.size() || offset > payload_size || nbytes > payload_size - offset)
      throw DataError(source + ": tensor '" + name + "' payload is truncated or inconsistent");
    const unsigned char* q = p + payload_start + offset;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = get_u64(q + 8 * i);
      double v;
      std::memcpy(&v, &bits, sizeof v);
      t[i] = v;
    }
    if (name.rfind(kVelocity, 0) == 0)
      ckpt.state.velocity[name.substr(std::strlen(kVelocity))] = std::move(t);
    else
      ckpt.state.params[name] = std::move(t);
  }

  KeyValues meta;
  try {
    meta = parse_key_values(meta_text, source);
    ckpt.spec = read_spec(meta);
    ckpt.state.step = std::stol(meta.at("step"));
    ckpt.state.seed = std::stoull(meta.at("seed"));
    ckpt.state.current_lr = std::stod(meta.at("current_lr"));
  } catch (const std::out_of_range&) {
    throw DataError(source + ": checkpoint metadata is incomplete");
  } catch (const std::invalid_argument&) {
    throw DataError(source + ": checkpoint metadata is malformed");
  } catch (const ConfigError& e) {
    throw DataError(source + ": " + e.what());
  }
  for (const auto& [k, v] : meta)
    if (k.rfind("model.", 0) != 0 && k != "format" && k != "step" && k != "seed" && k != "current_lr")
      ckpt.extra[k] = v;
  for (const auto& [name, t] : ckpt.state.params)
    if (!ckpt.state.velocity.count(name)) ckpt.state.velocity[name] = Tensor(t.shape);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + file.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, file.string());
}

std::string parameter_payload(const ParamSet& params) {
  std::string out;
  for (const auto& [name, t] : params)
    for (double v : t.data) put_f64(out, v);
  return out;
}

std::size_t load_compatible(ParamSet& target, const ParamSet& source) {
  std::size_t copied = 0;
  for (auto& [name, t] : target) {
    auto it = source.find(name);
    if (it != source.end() && it->second.shape == t.shape) {
      t = it->second;
      ++copied;
    }
  }
  return copied;
}

}  // namespace snagg
