#include "snagg/ops.hpp"

#include <cmath>
#include <memory>

namespace snagg {
namespace {

using MapConstRow = Eigen::Map<const RowMatrix>;
using MapRow = Eigen::Map<RowMatrix>;

Tape& tape_of(Var v) {
  if (!v.valid()) throw ContractError("operation on an invalid tape handle");
  return *v.tape;
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

struct ConvGeometry {
  int channels, height, width, kh, kw, stride, pad, out_h, out_w;
  Eigen::Index rows() const { return static_cast<Eigen::Index>(channels) * kh * kw; }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(out_h) * out_w; }
};

ConvGeometry conv_geometry(const char* op, int c, int h, int w, int kh, int kw, int stride, int pad) {
  if (stride <= 0) throw ParameterError(std::string(op) + ": stride must be positive");
  if (pad < 0) throw ParameterError(std::string(op) + ": padding must be non-negative");
  const int ph = h + 2 * pad, pw = w + 2 * pad;
  if (kh > ph || kw > pw)
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + std::to_string(ph) + "x" + std::to_string(pw));
  return {c, h, w, kh, kw, stride, pad, (ph - kh) / stride + 1, (pw - kw) / stride + 1};
}

// rows ordered (c, i, j) to match a [C x kh x kw] kernel slice
void im2col(const double* in, const ConvGeometry& g, double* out) {
  const Eigen::Index ncols = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        double* row = out + ((static_cast<Eigen::Index>(c) * g.kh + i) * g.kw + j) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int y = oy * g.stride + i - g.pad;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int x = ox * g.stride + j - g.pad;
            row[oy * g.out_w + ox] =
                (y >= 0 && y < g.height && x >= 0 && x < g.width) ? in[(c * g.height + y) * g.width + x] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* in_grad) {
  const Eigen::Index ncols = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + ((static_cast<Eigen::Index>(c) * g.kh + i) * g.kw + j) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int y = oy * g.stride + i - g.pad;
          if (y < 0 || y >= g.height) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int x = ox * g.stride + j - g.pad;
            if (x < 0 || x >= g.width) continue;
            in_grad[(c * g.height + y) * g.width + x] += row[oy * g.out_w + ox];
          }
        }
      }
}

// df is the derivative expressed in terms of the input value
Var unary(OpKind kind, Var x, double (*f)(double), double (*df)(double)) {
  Tape& t = tape_of(x);
  const int xi = x.id;
  return t.record(
      kind, {xi},
      [xi, f](const Tape& tp) {
        Tensor out = tp.value(xi);
        for (auto& v : out.data) v = f(v);
        return out;
      },
      [xi, df](Tape& tp, const Vector& g) {
        const Vector& in = tp.value(xi).data;
        Vector local(in.size());
        for (Eigen::Index k = 0; k < in.size(); ++k) local[k] = g[k] * df(in[k]);
        tp.accumulate(xi, local);
      });
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = tape_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul: cannot multiply " + to_string(sa) + " by " + to_string(sb));
  const int ai = a.id, bi = b.id;
  return t.record(
      OpKind::Matmul, {ai, bi},
      [ai, bi](const Tape& tp) {
        const Tensor& A = tp.value(ai);
        const Tensor& B = tp.value(bi);
        Tensor out({A.shape[0], B.shape[1]});
        out.matrix().noalias() = A.matrix() * B.matrix();
        return out;
      },
      [ai, bi](Tape& tp, const Vector& g) {
        const Tensor& A = tp.value(ai);
        const Tensor& B = tp.value(bi);
        MapConstRow G(g.data(), A.shape[0], B.shape[1]);
        if (tp.requires_grad(ai)) {
          RowMatrix ga = G * B.matrix().transpose();
          tp.accumulate(ai, Eigen::Map<const Vector>(ga.data(), ga.size()));
        }
        if (tp.requires_grad(bi)) {
          RowMatrix gb = A.matrix().transpose() * G;
          tp.accumulate(bi, Eigen::Map<const Vector>(gb.data(), gb.size()));
        }
      });
}

Var linear(Var w, Var x, std::optional<Var> b) {
  require_same_tape(w, x);
  Tape& t = tape_of(w);
  const Shape& sw = w.shape();
  if (sw.size() != 2) throw DimensionError("linear: weight must be rank 2, got " + to_string(sw));
  const int out_dim = sw[0], in_dim = sw[1];
  if (static_cast<int>(x.value().size()) != in_dim)
    throw DimensionError("linear: weight " + to_string(sw) + " cannot consume input " + to_string(x.shape()));
  std::vector<int> inputs{w.id, x.id};
  if (b) {
    require_same_tape(w, *b);
    if (b->shape() != Shape{out_dim})
      throw DimensionError("linear: bias " + to_string(b->shape()) + " does not match weight " + to_string(sw));
    inputs.push_back(b->id);
  }
  const int wi = w.id, xi = x.id, bi = b ? b->id : -1;
  return t.record(
      OpKind::Linear, inputs,
      [wi, xi, bi, out_dim](const Tape& tp) {
        Tensor out({out_dim});
        out.data.noalias() = tp.value(wi).matrix() * tp.value(xi).data;
        if (bi >= 0) out.data += tp.value(bi).data;
        return out;
      },
      [wi, xi, bi](Tape& tp, const Vector& g) {
        if (tp.requires_grad(wi)) {
          RowMatrix gw = g * tp.value(xi).data.transpose();
          tp.accumulate(wi, Eigen::Map<const Vector>(gw.data(), gw.size()));
        }
        if (tp.requires_grad(xi)) tp.accumulate(xi, tp.value(wi).matrix().transpose() * g);
        if (bi >= 0) tp.accumulate(bi, g);
      });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("add", a.shape(), b.shape());
  const int ai = a.id, bi = b.id;
  return tape_of(a).record(
      OpKind::Add, {ai, bi},
      [ai, bi](const Tape& tp) {
        Tensor out = tp.value(ai);
        out.data += tp.value(bi).data;
        return out;
      },
      [ai, bi](Tape& tp, const Vector& g) {
        tp.accumulate(ai, g);
        tp.accumulate(bi, g);
      });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape("mul", a.shape(), b.shape());
  const int ai = a.id, bi = b.id;
  return tape_of(a).record(
      OpKind::Mul, {ai, bi},
      [ai, bi](const Tape& tp) {
        Tensor out = tp.value(ai);
        out.data.array() *= tp.value(bi).data.array();
        return out;
      },
      [ai, bi](Tape& tp, const Vector& g) {
        if (tp.requires_grad(ai)) tp.accumulate(ai, (g.array() * tp.value(bi).data.array()).matrix());
        if (tp.requires_grad(bi)) tp.accumulate(bi, (g.array() * tp.value(ai).data.array()).matrix());
      });
}

Var scale(Var x, double factor) {
  const int xi = x.id;
  return tape_of(x).record(
      OpKind::Scale, {xi},
      [xi, factor](const Tape& tp) {
        Tensor out = tp.value(xi);
        out.data *= factor;
        return out;
      },
      [xi, factor](Tape& tp, const Vector& g) { tp.accumulate(xi, g * factor); });
}

Var relu(Var x) {
  return unary(
      OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(OpKind::Sigmoid, x, sigmoid_scalar, [](double v) {
    const double s = sigmoid_scalar(v);
    return s * (1.0 - s);
  });
}

Var tanh(Var x) {
  return unary(
      OpKind::Tanh, x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double y = std::tanh(v);
        return 1.0 - y * y;
      });
}

Var elementwise(Elementwise kind, std::span<const Var> args) {
  const std::size_t arity = (kind == Elementwise::Add || kind == Elementwise::Mul) ? 2 : 1;
  if (args.size() != arity)
    throw ParameterError("elementwise: expected " + std::to_string(arity) + " operands, got " +
                         std::to_string(args.size()));
  switch (kind) {
    case Elementwise::Relu: return relu(args[0]);
    case Elementwise::Sigmoid: return sigmoid(args[0]);
    case Elementwise::Tanh: return tanh(args[0]);
    case Elementwise::Add: return add(args[0], args[1]);
    case Elementwise::Mul: return mul(args[0], args[1]);
  }
  throw ParameterError("elementwise: unknown kind");
}

Var conv2d(Var input, Var kernels, std::optional<Var> bias, int stride, int padding) {
  require_same_tape(input, kernels);
  const Shape& si = input.shape();
  const Shape& sk = kernels.shape();
  if (si.size() != 3) throw DimensionError("conv2d: input must be [C x H x W], got " + to_string(si));
  if (sk.size() != 4 || sk[1] != si[0])
    throw DimensionError("conv2d: kernels " + to_string(sk) + " incompatible with input " + to_string(si));
  const ConvGeometry geo = conv_geometry("conv2d", si[0], si[1], si[2], sk[2], sk[3], stride, padding);
  const int out_c = sk[0];
  std::vector<int> inputs{input.id, kernels.id};
  if (bias) {
    require_same_tape(input, *bias);
    if (bias->shape() != Shape{out_c})
      throw DimensionError("conv2d: bias " + to_string(bias->shape()) + " does not match " +
                           std::to_string(out_c) + " output channels");
    inputs.push_back(bias->id);
  }
  const int ii = input.id, ki = kernels.id, bi = bias ? bias->id : -1;
  return tape_of(input).record(
      OpKind::Conv2d, inputs,
      [ii, ki, bi, geo, out_c](const Tape& tp) {
        RowMatrix cols(geo.rows(), geo.cols());
        im2col(tp.value(ii).data.data(), geo, cols.data());
        MapConstRow K(tp.value(ki).data.data(), out_c, geo.rows());
        Tensor out({out_c, geo.out_h, geo.out_w});
        MapRow O(out.data.data(), out_c, geo.cols());
        O.noalias() = K * cols;
        if (bi >= 0) O.colwise() += tp.value(bi).data;
        return out;
      },
      [ii, ki, bi, geo, out_c](Tape& tp, const Vector& g) {
        MapConstRow G(g.data(), out_c, geo.cols());
        if (tp.requires_grad(ki)) {
          RowMatrix cols(geo.rows(), geo.cols());
          im2col(tp.value(ii).data.data(), geo, cols.data());
          RowMatrix gk = G * cols.transpose();
          tp.accumulate(ki, Eigen::Map<const Vector>(gk.data(), gk.size()));
        }
        if (tp.requires_grad(ii)) {
          MapConstRow K(tp.value(ki).data.data(), out_c, geo.rows());
          RowMatrix gcols = K.transpose() * G;
          Vector gin = Vector::Zero(tp.value(ii).data.size());
          col2im_add(gcols.data(), geo, gin.data());
          tp.accumulate(ii, gin);
        }
        if (bi >= 0) tp.accumulate(bi, G.rowwise().sum());
      });
}

Var max_pool2d(Var input, int k, int stride) {
  if (k <= 0 || stride <= 0) throw ParameterError("max_pool2d: window and stride must be positive");
  const Shape& s = input.shape();
  if (s.size() != 3) throw DimensionError("max_pool2d: input must be [C x H x W], got " + to_string(s));
  const int c = s[0], h = s[1], w = s[2];
  if (k > h || k > w) throw DimensionError("max_pool2d: window " + std::to_string(k) + " does not fit " + to_string(s));
  const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  // argmax[o] indexes the input element selected by output o
  auto argmax = [=](const Vector& in) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(c) * oh * ow);
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          Eigen::Index best = (static_cast<Eigen::Index>(ch) * h + oy * stride) * w + ox * stride;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const Eigen::Index at = (static_cast<Eigen::Index>(ch) * h + oy * stride + i) * w + ox * stride + j;
              if (in[at] > in[best]) best = at;
            }
          idx[o] = best;
        }
    return idx;
  };
  const int xi = input.id;
  return tape_of(input).record(
      OpKind::MaxPool2d, {xi},
      [xi, argmax, c, oh, ow](const Tape& tp) {
        const Vector& in = tp.value(xi).data;
        const auto idx = argmax(in);
        Tensor out({c, oh, ow});
        for (std::size_t o = 0; o < idx.size(); ++o) out.data[static_cast<Eigen::Index>(o)] = in[idx[o]];
        return out;
      },
      [xi, argmax](Tape& tp, const Vector& g) {
        const auto idx = argmax(tp.value(xi).data);
        Vector gin = Vector::Zero(tp.value(xi).data.size());
        for (std::size_t o = 0; o < idx.size(); ++o) gin[idx[o]] += g[static_cast<Eigen::Index>(o)];
        tp.accumulate(xi, gin);
      });
}

Var global_avg_pool(Var input) {
  const Shape& s = input.shape();
  if (s.size() != 3) throw DimensionError("global_avg_pool: input must be [C x H x W], got " + to_string(s));
  const int c = s[0], hw = s[1] * s[2];
  const int xi = input.id;
  return tape_of(input).record(
      OpKind::GlobalAvgPool, {xi},
      [xi, c, hw](const Tape& tp) {
        Tensor out({c});
        out.data = MapConstRow(tp.value(xi).data.data(), c, hw).rowwise().mean();
        return out;
      },
      [xi, c, hw](Tape& tp, const Vector& g) {
        RowMatrix gin = (g / hw).replicate(1, hw);
        tp.accumulate(xi, Eigen::Map<const Vector>(gin.data(), static_cast<Eigen::Index>(c) * hw));
      });
}

namespace {

// index of the list entry holding the maximum of element e; earliest wins ties
std::vector<int> leading_argmax(const std::vector<const Vector*>& items) {
  const Eigen::Index n = items.front()->size();
  std::vector<int> who(static_cast<std::size_t>(n), 0);
  for (std::size_t t = 1; t < items.size(); ++t) {
    const Vector& v = *items[t];
    for (Eigen::Index e = 0; e < n; ++e)
      if (v[e] > (*items[static_cast<std::size_t>(who[static_cast<std::size_t>(e)])])[e])
        who[static_cast<std::size_t>(e)] = static_cast<int>(t);
  }
  return who;
}

}  // namespace

Var temporal_max_pool(std::span<const Var> frames) {
  if (frames.empty()) throw ParameterError("temporal_max_pool: empty frame list");
  std::vector<int> ids;
  for (const Var& f : frames) {
    require_same_tape(frames.front(), f);
    require_same_shape("temporal_max_pool", frames.front().shape(), f.shape());
    ids.push_back(f.id);
  }
  auto gather = [ids](const Tape& tp) {
    std::vector<const Vector*> items;
    for (int id : ids) items.push_back(&tp.value(id).data);
    return items;
  };
  return tape_of(frames.front())
      .record(
          OpKind::TemporalMax, ids,
          [ids, gather](const Tape& tp) {
            const auto items = gather(tp);
            const auto who = leading_argmax(items);
            Tensor out(tp.value(ids.front()).shape);
            for (std::size_t e = 0; e < who.size(); ++e)
              out.data[static_cast<Eigen::Index>(e)] =
                  (*items[static_cast<std::size_t>(who[e])])[static_cast<Eigen::Index>(e)];
            return out;
          },
          [ids, gather](Tape& tp, const Vector& g) {
            const auto who = leading_argmax(gather(tp));
            std::vector<Vector> grads(ids.size());
            for (std::size_t t = 0; t < ids.size(); ++t)
              if (tp.requires_grad(ids[t])) grads[t] = Vector::Zero(g.size());
            for (std::size_t e = 0; e < who.size(); ++e) {
              Vector& dst = grads[static_cast<std::size_t>(who[e])];
              if (dst.size()) dst[static_cast<Eigen::Index>(e)] += g[static_cast<Eigen::Index>(e)];
            }
            for (std::size_t t = 0; t < ids.size(); ++t)
              if (grads[t].size()) tp.accumulate(ids[t], grads[t]);
          });
}

Var max_over_leading(Var x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("max_over_leading: need rank >= 2, got " + to_string(s));
  const int p = s[0];
  const Shape out_shape(s.begin() + 1, s.end());
  const Eigen::Index inner = static_cast<Eigen::Index>(numel(out_shape));
  auto argmax = [p, inner](const Vector& in) {
    std::vector<int> who(static_cast<std::size_t>(inner), 0);
    for (int q = 1; q < p; ++q)
      for (Eigen::Index e = 0; e < inner; ++e)
        if (in[q * inner + e] > in[who[static_cast<std::size_t>(e)] * inner + e]) who[static_cast<std::size_t>(e)] = q;
    return who;
  };
  const int xi = x.id;
  return tape_of(x).record(
      OpKind::MaxLeading, {xi},
      [xi, argmax, out_shape, inner](const Tape& tp) {
        const Vector& in = tp.value(xi).data;
        const auto who = argmax(in);
        Tensor out(out_shape);
        for (Eigen::Index e = 0; e < inner; ++e) out.data[e] = in[who[static_cast<std::size_t>(e)] * inner + e];
        return out;
      },
      [xi, argmax, inner](Tape& tp, const Vector& g) {
        const Vector& in = tp.value(xi).data;
        const auto who = argmax(in);
        Vector gin = Vector::Zero(in.size());
        for (Eigen::Index e = 0; e < inner; ++e) gin[who[static_cast<std::size_t>(e)] * inner + e] += g[e];
        tp.accumulate(xi, gin);
      });
}

Var stack(std::span<const Var> items) {
  if (items.empty()) throw ParameterError("stack: empty list");
  std::vector<int> ids;
  for (const Var& v : items) {
    require_same_tape(items.front(), v);
    require_same_shape("stack", items.front().shape(), v.shape());
    ids.push_back(v.id);
  }
  Shape out_shape{static_cast<int>(items.size())};
  const Shape& inner = items.front().shape();
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  const Eigen::Index n = static_cast<Eigen::Index>(numel(inner));
  return tape_of(items.front())
      .record(
          OpKind::Stack, ids,
          [ids, out_shape, n](const Tape& tp) {
            Tensor out(out_shape);
            for (std::size_t t = 0; t < ids.size(); ++t)
              out.data.segment(static_cast<Eigen::Index>(t) * n, n) = tp.value(ids[t]).data;
            return out;
          },
          [ids, n](Tape& tp, const Vector& g) {
            for (std::size_t t = 0; t < ids.size(); ++t)
              if (tp.requires_grad(ids[t])) tp.accumulate(ids[t], g.segment(static_cast<Eigen::Index>(t) * n, n));
          });
}

Var concat(std::span<const Var> items) {
  if (items.empty()) throw ParameterError("concat: empty list");
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets{0};
  for (const Var& v : items) {
    require_same_tape(items.front(), v);
    ids.push_back(v.id);
    offsets.push_back(offsets.back() + static_cast<Eigen::Index>(v.value().size()));
  }
  const int total = static_cast<int>(offsets.back());
  return tape_of(items.front())
      .record(
          OpKind::Concat, ids,
          [ids, offsets, total](const Tape& tp) {
            Tensor out({total});
            for (std::size_t t = 0; t < ids.size(); ++t)
              out.data.segment(offsets[t], offsets[t + 1] - offsets[t]) = tp.value(ids[t]).data;
            return out;
          },
          [ids, offsets](Tape& tp, const Vector& g) {
            for (std::size_t t = 0; t < ids.size(); ++t)
              if (tp.requires_grad(ids[t])) tp.accumulate(ids[t], g.segment(offsets[t], offsets[t + 1] - offsets[t]));
          });
}

Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.value().size())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  const int xi = x.id;
  return tape_of(x).record(
      OpKind::Reshape, {xi}, [xi, shape](const Tape& tp) { return Tensor(shape, tp.value(xi).data); },
      [xi](Tape& tp, const Vector& g) { tp.accumulate(xi, g); });
}

Var flatten(Var x) { return reshape(x, {static_cast<int>(x.value().size())}); }

Var sum(Var x) {
  const int xi = x.id;
  return tape_of(x).record(
      OpKind::Sum, {xi}, [xi](const Tape& tp) { return Tensor::scalar(tp.value(xi).data.sum()); },
      [xi](Tape& tp, const Vector& g) { tp.accumulate(xi, Vector::Constant(tp.value(xi).data.size(), g[0])); });
}

Var add_n(std::span<const Var> items) {
  if (items.empty()) throw ParameterError("add_n: empty list");
  std::vector<int> ids;
  for (const Var& v : items) {
    require_same_tape(items.front(), v);
    require_same_shape("add_n", items.front().shape(), v.shape());
    ids.push_back(v.id);
  }
  return tape_of(items.front())
      .record(
          OpKind::AddN, ids,
          [ids](const Tape& tp) {
            Tensor out = tp.value(ids.front());
            for (std::size_t t = 1; t < ids.size(); ++t) out.data += tp.value(ids[t]).data;
            return out;
          },
          [ids](Tape& tp, const Vector& g) {
            for (int id : ids) tp.accumulate(id, g);
          });
}

Var conv3d_time(Var input, Var kernels, std::optional<Var> bias, int time_stride, int padding) {
  require_same_tape(input, kernels);
  const Shape& si = input.shape();
  const Shape& sk = kernels.shape();
  if (si.size() != 4) throw DimensionError("conv3d_time: input must be [T x C x H x W], got " + to_string(si));
  if (sk.size() != 5 || sk[2] != si[1])
    throw DimensionError("conv3d_time: kernels " + to_string(sk) + " incompatible with input " + to_string(si));
  if (time_stride <= 0) throw ParameterError("conv3d_time: temporal stride must be positive");
  const int frames = si[0], out_c = sk[0], kt = sk[1];
  if (kt > frames)
    throw DimensionError("conv3d_time: temporal extent " + std::to_string(kt) + " exceeds " + std::to_string(frames) +
                         " frames");
  const ConvGeometry geo = conv_geometry("conv3d_time", si[1], si[2], si[3], sk[3], sk[4], 1, padding);
  const int positions = (frames - kt) / time_stride + 1;
  std::vector<int> inputs{input.id, kernels.id};
  if (bias) {
    if (bias->shape() != Shape{out_c})
      throw DimensionError("conv3d_time: bias " + to_string(bias->shape()) + " does not match " +
                           std::to_string(out_c) + " output channels");
    inputs.push_back(bias->id);
  }
  const Eigen::Index frame_size = static_cast<Eigen::Index>(si[1]) * si[2] * si[3];
  const Eigen::Index block = geo.rows() * geo.cols();
  // per-frame im2col blocks, stacked along rows per temporal position
  auto frame_cols = [=](const Vector& in) {
    RowMatrix all(static_cast<Eigen::Index>(frames) * geo.rows(), geo.cols());
    for (int t = 0; t < frames; ++t) im2col(in.data() + t * frame_size, geo, all.data() + t * block);
    return all;
  };
  const int ii = input.id, ki = kernels.id, bi = bias ? bias->id : -1;
  const Eigen::Index span_rows = static_cast<Eigen::Index>(kt) * geo.rows();
  return tape_of(input).record(
      OpKind::Conv3dTime, inputs,
      [=](const Tape& tp) {
        const RowMatrix all = frame_cols(tp.value(ii).data);
        MapConstRow K(tp.value(ki).data.data(), out_c, span_rows);
        Tensor out({positions, out_c, geo.out_h, geo.out_w});
        for (int q = 0; q < positions; ++q) {
          MapRow O(out.data.data() + static_cast<Eigen::Index>(q) * out_c * geo.cols(), out_c, geo.cols());
          O.noalias() = K * all.middleRows(static_cast<Eigen::Index>(q) * time_stride * geo.rows(), span_rows);
          if (bi >= 0) O.colwise() += tp.value(bi).data;
        }
        return out;
      },
      [=](Tape& tp, const Vector& g) {
        const RowMatrix all = frame_cols(tp.value(ii).data);
        MapConstRow K(tp.value(ki).data.data(), out_c, span_rows);
        RowMatrix gk = RowMatrix::Zero(out_c, span_rows);
        RowMatrix gall = RowMatrix::Zero(all.rows(), all.cols());
        Vector gb = Vector::Zero(out_c);
        for (int q = 0; q < positions; ++q) {
          MapConstRow G(g.data() + static_cast<Eigen::Index>(q) * out_c * geo.cols(), out_c, geo.cols());
          const Eigen::Index r0 = static_cast<Eigen::Index>(q) * time_stride * geo.rows();
          gk.noalias() += G * all.middleRows(r0, span_rows).transpose();
          gall.middleRows(r0, span_rows).noalias() += K.transpose() * G;
          gb += G.rowwise().sum();
        }
        tp.accumulate(ki, Eigen::Map<const Vector>(gk.data(), gk.size()));
        if (tp.requires_grad(ii)) {
          Vector gin = Vector::Zero(tp.value(ii).data.size());
          for (int t = 0; t < frames; ++t) col2im_add(gall.data() + t * block, geo, gin.data() + t * frame_size);
          tp.accumulate(ii, gin);
        }
        if (bi >= 0) tp.accumulate(bi, gb);
      });
}

Var softmax_cross_entropy(Var logits, int label) {
  const int k = static_cast<int>(logits.value().size());
  if (label < 0 || label >= k)
    throw ParameterError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                         std::to_string(k) + ")");
  const int li = logits.id;
  return tape_of(logits).record(
      OpKind::SoftmaxCrossEntropy, {li},
      [li, label](const Tape& tp) {
        const Vector& z = tp.value(li).data;
        const double m = z.maxCoeff();
        const double lse = m + std::log((z.array() - m).exp().sum());
        return Tensor::scalar(lse - z[label]);
      },
      [li, label](Tape& tp, const Vector& g) {
        Vector p = softmax(tp.value(li).data);
        p[label] -= 1.0;
        tp.accumulate(li, p * g[0]);
      });
}

Var dropout(Var x, double keep_prob, Rng& rng, bool training) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0)
    throw ParameterError("dropout: keep_prob must lie in (0, 1], got " + std::to_string(keep_prob));
  if (!training || keep_prob == 1.0) return x;
  auto mask = std::make_shared<Vector>(x.value().data.size());
  for (auto& m : *mask) m = rng.bernoulli(keep_prob) ? 1.0 / keep_prob : 0.0;
  const int xi = x.id;
  return tape_of(x).record(
      OpKind::Dropout, {xi},
      [xi, mask](const Tape& tp) {
        Tensor out = tp.value(xi);
        out.data.array() *= mask->array();
        return out;
      },
      [xi, mask](Tape& tp, const Vector& g) { tp.accumulate(xi, (g.array() * mask->array()).matrix()); });
}

}  // namespace snagg
