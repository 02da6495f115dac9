#pragma once

// Loop-level reimplementations of the forward passes, written without the
// tape, for composition oracles.

#include "snagg/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace snagg::ref {

using Vec = std::vector<double>;

struct Map3 {
  int c = 0, h = 0, w = 0;
  Vec v;
  double& at(int ci, int y, int x) { return v[static_cast<std::size_t>((ci * h + y) * w + x)]; }
  double at(int ci, int y, int x) const { return v[static_cast<std::size_t>((ci * h + y) * w + x)]; }
};

inline Map3 from_tensor(const Tensor& t) {
  Map3 m{t.dim(0), t.dim(1), t.dim(2), Vec(t.data.data(), t.data.data() + t.size())};
  return m;
}

inline Map3 conv(const Map3& in, const Tensor& k, const Tensor& b, int stride, int pad) {
  const int o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  Map3 out{o, (in.h + 2 * pad - kh) / stride + 1, (in.w + 2 * pad - kw) / stride + 1, {}};
  out.v.assign(static_cast<std::size_t>(out.c * out.h * out.w), 0.0);
  for (int oc = 0; oc < o; ++oc)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double s = b[static_cast<std::size_t>(oc)];
        for (int ic = 0; ic < in.c; ++ic)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              const int iy = y * stride + dy - pad, ix = x * stride + dx - pad;
              if (iy < 0 || ix < 0 || iy >= in.h || ix >= in.w) continue;
              s += k[static_cast<std::size_t>(((oc * in.c + ic) * kh + dy) * kw + dx)] * in.at(ic, iy, ix);
            }
        out.at(oc, y, x) = s;
      }
  return out;
}

inline Map3 pool(const Map3& in, int k, int s) {
  Map3 out{in.c, (in.h - k) / s + 1, (in.w - k) / s + 1, {}};
  out.v.assign(static_cast<std::size_t>(out.c * out.h * out.w), 0.0);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double m = -INFINITY;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) m = std::max(m, in.at(c, y * s + dy, x * s + dx));
        out.at(c, y, x) = m;
      }
  return out;
}

inline Vec relu(Vec v) {
  for (double& x : v) x = std::max(0.0, x);
  return v;
}

inline Vec dense(const ParamSet& p, const std::string& prefix, const Vec& x) {
  const Tensor& w = p.at(prefix + ".weight");
  const Tensor& b = p.at(prefix + ".bias");
  Vec out(static_cast<std::size_t>(w.dim(0)));
  for (int i = 0; i < w.dim(0); ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int j = 0; j < w.dim(1); ++j) s += w[static_cast<std::size_t>(i * w.dim(1) + j)] * x[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

inline Vec vmax(const std::vector<Vec>& xs) {
  Vec m = xs.front();
  for (const Vec& x : xs)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], x[i]);
  return m;
}

/// Encoder output at the tap, flattened.
inline Vec encode(const EncoderConfig& cfg, const ParamSet& p, const Tensor& frame) {
  Map3 x = from_tensor(frame);
  for (std::size_t i = 0; i < cfg.conv_layers.size(); ++i) {
    const auto& l = cfg.conv_layers[i];
    const std::string n = "encoder.conv" + std::to_string(i);
    x = conv(x, p.at(n + ".weight"), p.at(n + ".bias"), l.stride, l.kernel_size / 2);
    x.v = relu(x.v);
    if (l.pool_k > 0) x = pool(x, l.pool_k, l.pool_stride);
  }
  Vec v = x.v;
  if (cfg.global_avg_pool) {
    v.assign(static_cast<std::size_t>(x.c), 0.0);
    for (int c = 0; c < x.c; ++c) {
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) v[static_cast<std::size_t>(c)] += x.at(c, y, xx);
      v[static_cast<std::size_t>(c)] /= x.h * x.w;
    }
  }
  if (cfg.feature_tap == FeatureTap::LastConv) return v;
  for (std::size_t i = 0; i < cfg.fc_layers.size(); ++i) v = relu(dense(p, "encoder.fc" + std::to_string(i), v));
  return v;
}

inline Vec fcs(const ParamSet& p, Vec x, std::size_t first, std::size_t count) {
  for (std::size_t i = first; i < first + count; ++i) x = relu(dense(p, "fc" + std::to_string(i), x));
  return x;
}

inline std::vector<Vec> encode_all(const ArchitectureSpec& s, const ParamSet& p, const std::vector<Tensor>& frames) {
  std::vector<Vec> out;
  for (const Tensor& f : frames) out.push_back(encode(s.encoder, p, f));
  return out;
}

inline std::vector<Vec> windows(const ArchitectureSpec& s, const std::vector<Vec>& feats) {
  std::vector<Vec> out;
  for (int st : window_starts(static_cast<int>(feats.size()), s.temporal_window, s.temporal_stride))
    out.push_back(vmax({feats.begin() + st, feats.begin() + st + s.temporal_window}));
  return out;
}

/// 3-D convolution over (time, y, x) with spatial padding 1, then ReLU.
/// Returns one flattened [O x H x W] map per temporal position.
inline std::vector<Vec> tdc(const ArchitectureSpec& s, const ParamSet& p, const std::vector<Vec>& feats, Shape tap) {
  const Tensor& k = p.at("tdc.weight");
  const Tensor& b = p.at("tdc.bias");
  const int O = k.dim(0), kt = k.dim(1), C = tap[0], H = tap[1], W = tap[2];
  const int T = static_cast<int>(feats.size());
  std::vector<Vec> out;
  for (int t0 = 0; t0 + kt <= T; t0 += s.temporal_stride) {
    Vec m(static_cast<std::size_t>(O * H * W));
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = b[static_cast<std::size_t>(o)];
          for (int dt = 0; dt < kt; ++dt)
            for (int c = 0; c < C; ++c)
              for (int dy = 0; dy < 3; ++dy)
                for (int dx = 0; dx < 3; ++dx) {
                  const int iy = y + dy - 1, ix = x + dx - 1;
                  if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                  acc += k[static_cast<std::size_t>((((o * kt + dt) * C + c) * 3 + dy) * 3 + dx)] *
                         feats[static_cast<std::size_t>(t0 + dt)][static_cast<std::size_t>((c * H + iy) * W + ix)];
                }
          m[static_cast<std::size_t>((o * H + y) * W + x)] = std::max(0.0, acc);
        }
    out.push_back(m);
  }
  return out;
}

/// Infer-mode logits for every pooling kind.
inline Vec logits(const ArchitectureSpec& s, const ParamSet& p, std::vector<Tensor> frames) {
  const std::size_t nfc = s.fc_widths.size();
  switch (s.kind) {
    case ArchKind::ConvPooling:
    case ArchKind::LatePooling:
    case ArchKind::InceptionTapPooling:
      return dense(p, "out", fcs(p, vmax(encode_all(s, p, frames)), 0, nfc));
    case ArchKind::SlowPooling: {
      frames = pad_frames(frames, s.temporal_window);
      std::vector<Vec> per_window;
      for (const Vec& w : windows(s, encode_all(s, p, frames))) per_window.push_back(fcs(p, w, 0, 1));
      return dense(p, "out", fcs(p, vmax(per_window), 1, nfc - 1));
    }
    case ArchKind::LocalPooling: {
      frames = pad_frames(frames, s.temporal_window);
      Vec cat;
      for (const Vec& w : windows(s, encode_all(s, p, frames))) {
        const Vec o = fcs(p, w, 0, nfc);
        cat.insert(cat.end(), o.begin(), o.end());
      }
      return dense(p, "out", cat);
    }
    case ArchKind::TimeDomainConv: {
      frames = pad_frames(frames, s.temporal_window);
      return dense(p, "out", fcs(p, vmax(tdc(s, p, encode_all(s, p, frames), feature_shape(s.encoder))), 0, nfc));
    }
    case ArchKind::Lstm: break;
  }
  throw ContractError("ref::logits: unsupported kind");
}

}  // namespace snagg::ref
