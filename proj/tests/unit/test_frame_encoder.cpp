#include "helpers.hpp"
#include "reference.hpp"

#include <doctest.h>

using namespace snagg;
using namespace snagg::test;

namespace {

// Applies the documented per-layer shape rules one layer at a time.
Shape ladder(const EncoderConfig& cfg) {
  int c = cfg.input.channels, h = cfg.input.height, w = cfg.input.width;
  for (const auto& l : cfg.conv_layers) {
    const int pad = l.kernel_size / 2;
    h = (h + 2 * pad - l.kernel_size) / l.stride + 1;
    w = (w + 2 * pad - l.kernel_size) / l.stride + 1;
    c = l.out_channels;
    if (l.pool_k > 0) {
      h = (h - l.pool_k) / l.pool_stride + 1;
      w = (w - l.pool_k) / l.pool_stride + 1;
    }
  }
  if (cfg.feature_tap == FeatureTap::LastFc) {
    int width = cfg.global_avg_pool ? c : c * h * w;
    if (!cfg.fc_layers.empty()) width = cfg.fc_layers.back();
    return {width};
  }
  return {c, h, w};
}

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.input = {2, 8, 8};
  cfg.conv_layers = {{3, 3, 1, 2, 2}, {4, 3, 1, 0, 0}};
  return cfg;
}

std::vector<Tensor> features_of(const EncoderConfig& cfg, const ParamSet& p, const std::vector<Tensor>& frames) {
  Tape tape;
  ParamBinding bind(tape, p);
  Rng rng(0);
  std::vector<Tensor> out;
  for (Var v : encode_frames(bind, cfg, frames, Mode::Infer, rng).per_frame) out.push_back(v.value());
  return out;
}

}  // namespace

TEST_CASE("preset feature shapes") {
  const EncoderConfig alex = preset("tiny_alex");
  CHECK(alex.feature_tap == FeatureTap::LastConv);
  CHECK(ladder(alex) == Shape{32, 4, 4});
  CHECK(feature_shape(alex) == ladder(alex));

  const EncoderConfig inc = preset("tiny_inception_tap");
  CHECK(inc.feature_tap == FeatureTap::LastFc);
  CHECK(ladder(inc) == Shape{64});
  CHECK(feature_shape(inc) == Shape{64});

  for (const auto& name : preset_names()) CHECK(feature_shape(preset(name)) == ladder(preset(name)));
  CHECK(feature_shape(preset("micro_alex", {1, 16, 16})) == Shape{16, 4, 4});
}

TEST_CASE("unknown preset lists the known ones") {
  try {
    preset("alexnet");
    FAIL("expected a parameter error");
  } catch (const ParameterError& e) {
    CHECK(std::string(e.what()).find("tiny_alex") != std::string::npos);
    CHECK(std::string(e.what()).find("tiny_inception_tap") != std::string::npos);
  }
}

TEST_CASE("encoder validation") {
  EncoderConfig cfg = small_encoder();
  cfg.dropout_ratio = 1.0;
  CHECK_THROWS_AS(validate(cfg), ParameterError);
  cfg = small_encoder();
  cfg.conv_layers.push_back({4, 3, 1, 8, 8});
  CHECK_THROWS_AS(validate(cfg), DimensionError);
}

TEST_CASE("identical frames give identical features and order is preserved") {
  const EncoderConfig cfg = small_encoder();
  ParamSet p;
  Rng init(1);
  init_encoder(cfg, p, init);
  Rng rng(2);
  const Tensor f = random_tensor({2, 8, 8}, rng, 0, 1);
  const auto same = features_of(cfg, p, {f, f, f, f});
  for (const Tensor& t : same) CHECK(identical(t, same.front()));

  const std::vector<Tensor> frames = random_frames(5, {2, 8, 8}, rng);
  const auto base = features_of(cfg, p, frames);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<Tensor> permuted;
  for (std::size_t i : perm) permuted.push_back(frames[i]);
  const auto out = features_of(cfg, p, permuted);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(identical(out[i], base[perm[i]]));

  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto alone = features_of(cfg, p, {frames[t]});
    CHECK(identical(alone.front(), base[t]));
    CHECK(max_abs_diff(base[t], ref::encode(cfg, p, frames[t])) < 1e-12);
  }
}

TEST_CASE("input mean is subtracted before the first layer") {
  EncoderConfig cfg = small_encoder();
  ParamSet p;
  Rng init(1);
  init_encoder(cfg, p, init);
  Rng rng(9);
  const std::vector<Tensor> frames = random_frames(2, {2, 8, 8}, rng);
  std::vector<Tensor> shifted = frames;
  for (Tensor& t : shifted) {
    t.data.head(64).array() -= 0.375;
    t.data.tail(64).array() -= -0.25;
  }
  EncoderConfig centred = cfg;
  centred.input_mean = {0.375, -0.25};
  const auto a = features_of(centred, p, frames), b = features_of(cfg, p, shifted);
  for (std::size_t t = 0; t < a.size(); ++t) CHECK(identical(a[t], b[t]));
  centred.input_mean = {0.375, std::nan("")};
  CHECK_THROWS_AS(validate(centred), ParameterError);
  centred.input_mean = {0.375};
  CHECK_THROWS_AS(validate(centred), ParameterError);
}

TEST_CASE("a mismatched frame reports its index") {
  const EncoderConfig cfg = small_encoder();
  ParamSet p;
  Rng init(1);
  init_encoder(cfg, p, init);
  Rng rng(3);
  std::vector<Tensor> frames = random_frames(3, {2, 8, 8}, rng);
  frames[2] = Tensor({2, 8, 7});
  try {
    features_of(cfg, p, frames);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("parameter count does not depend on clip length") {
  const EncoderConfig enc = preset("micro_alex", {1, 16, 16});
  const std::size_t one = parameter_count(init_params(make_spec(ArchKind::ConvPooling, enc, 4, 1, {8}), 1));
  for (int t : {2, 16, 120})
    CHECK(parameter_count(init_params(make_spec(ArchKind::ConvPooling, enc, 4, t, {8}), 1)) == one);
}

TEST_CASE("shared-parameter gradient equals the sum of per-frame gradients") {
  EncoderConfig cfg = small_encoder();
  cfg.feature_tap = FeatureTap::LastFc;
  cfg.fc_layers = {5};
  ParamSet p;
  Rng init(4);
  init_encoder(cfg, p, init);
  Rng rng(5);
  const std::vector<Tensor> frames = random_frames(3, {2, 8, 8}, rng);

  Tape joint;
  ParamBinding bind(joint, p);
  Rng unused(0);
  const FrameFeatures f = encode_frames(bind, cfg, frames, Mode::Infer, unused);
  std::vector<Var> sums;
  for (Var v : f.per_frame) sums.push_back(sum(v));
  joint.backward(sum(add_n(sums)));
  const ParamSet total = joint.parameter_grads();

  ParamSet accumulated;
  for (const Tensor& frame : frames) {
    Tape t;
    ParamBinding b(t, p);
    Rng r(0);
    t.backward(sum(encode_frame(b, cfg, frame, Mode::Infer, r)));
    for (const auto& [name, g] : t.parameter_grads()) {
      auto it = accumulated.find(name);
      if (it == accumulated.end())
        accumulated.emplace(name, g);
      else
        it->second.data += g.data;
    }
  }
  REQUIRE(total.size() == accumulated.size());
  for (const auto& [name, g] : total)
    CHECK((g.data - accumulated.at(name).data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("train-mode dropout masks differ across frames") {
  EncoderConfig cfg = small_encoder();
  cfg.feature_tap = FeatureTap::LastFc;
  cfg.fc_layers = {32};
  cfg.dropout_ratio = 0.6;
  ParamSet p;
  Rng init(6);
  init_encoder(cfg, p, init);
  for (auto& [name, t] : p)
    if (name == "encoder.fc0.bias") t.data.setConstant(1.0);
  Rng rng(7);
  const Tensor f = random_tensor({2, 8, 8}, rng, 0, 1);
  Tape tape;
  ParamBinding bind(tape, p);
  Rng drop(8);
  const FrameFeatures out = encode_frames(bind, cfg, std::vector<Tensor>{f, f}, Mode::Train, drop);
  CHECK_FALSE(identical(out.per_frame[0].value(), out.per_frame[1].value()));
}
