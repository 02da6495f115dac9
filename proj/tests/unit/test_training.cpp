#include "helpers.hpp"

#include "snagg/training.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace snagg;
using namespace snagg::test;

namespace {

OptimizerConfig plain(double lr, double momentum = 0.0, double wd = 0.0) {
  OptimizerConfig c;
  c.base_lr = lr;
  c.momentum = momentum;
  c.weight_decay = wd;
  c.lr_decay_factor = 1.0;
  return c;
}

TrainState scalar_state(double w, double v = 0.0) {
  TrainState s;
  s.params["w"] = Tensor::scalar(w);
  s.velocity["w"] = Tensor::scalar(v);
  return s;
}

TaskConfig small_task(Task task = Task::ShapeIdentity) {
  TaskConfig t;
  t.task = task;
  t.num_classes = 4;
  t.frames = 4;
  t.channels = 1;
  t.height = 16;
  t.width = 16;
  t.train_videos = 32;
  t.test_videos = 16;
  t.seed = 21;
  return t;
}

AugmentConfig no_resize(int frames) {
  AugmentConfig a;
  a.frames = frames;
  a.resize_height = a.resize_width = 0;
  a.crop_height = a.crop_width = 0;
  a.flip = false;
  return a;
}

ArchitectureSpec small_conv(int frames) {
  return make_spec(ArchKind::ConvPooling, preset("micro_alex", {1, 16, 16}), 4, frames, {16});
}

const Dataset& train_split() {
  static const Dataset d = select(generate(small_task()), "train");
  return d;
}

TrainOptions options(long steps, int frames = 4) {
  TrainOptions o;
  o.batch_size = 4;
  o.max_steps = steps;
  o.augment = no_resize(frames);
  return o;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  OptimizerConfig c = plain(0.1);
  c.lr_decay_factor = 0.5;
  c.decay_interval_steps = 10;
  CHECK(learning_rate(c, 0) == 0.1);
  CHECK(learning_rate(c, 9) == 0.1);
  CHECK(learning_rate(c, 10) == 0.05);
  CHECK(learning_rate(c, 25) == 0.025);
  c.lstm_lr_scale_by_frames = true;
  CHECK(learning_rate(c, 0, 16) == doctest::Approx(1.6).epsilon(1e-15));

  ArchitectureSpec lstm = make_spec(ArchKind::Lstm, preset("micro_alex", {1, 16, 16}), 4, 12);
  CHECK(lr_frames(lstm, c) == 12);
  CHECK(lr_frames(small_conv(12), c) == 1);

  TrainState s = scalar_state(1.0);
  for (int k = 0; k < 23; ++k) sgd_momentum_step(s, {{"w", Tensor::scalar(0.0)}}, c, 3);
  CHECK(s.step == 23);
  CHECK(s.current_lr == 0.1 * 3 * 0.25);

  CHECK_THROWS_AS(validate(plain(0.1, 1.0)), ParameterError);
  OptimizerConfig bad = plain(0.1);
  bad.lr_decay_factor = 0;
  CHECK_THROWS_AS(validate(bad), ParameterError);
}

TEST_CASE("momentum update rule") {
  SUBCASE("plain gradient descent") {
    TrainState s = scalar_state(2.0);
    sgd_momentum_step(s, {{"w", Tensor::scalar(0.5)}}, plain(0.1, 0.0, 0.01));
    CHECK(s.params["w"][0] == doctest::Approx(2.0 - 0.1 * (0.5 + 0.01 * 2.0)).epsilon(1e-15));
  }
  SUBCASE("zero gradient") {
    TrainState s = scalar_state(2.0);
    sgd_momentum_step(s, {{"w", Tensor::scalar(0.0)}}, plain(0.1, 0.9));
    CHECK(s.params["w"][0] == 2.0);
    TrainState moving = scalar_state(2.0, 0.4);
    sgd_momentum_step(moving, {{"w", Tensor::scalar(0.0)}}, plain(0.1, 0.9));
    CHECK(moving.velocity["w"][0] == 0.9 * 0.4);
    CHECK(moving.params["w"][0] == 2.0 + 0.9 * 0.4);
  }
  SUBCASE("three steps on a quadratic") {
    const double a = 3.0, b = -0.5, lr = 0.05, m = 0.9, wd = 0.01;
    TrainState s = scalar_state(1.0);
    double w = 1.0, v = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double g = a * (w - b);
      sgd_momentum_step(s, {{"w", Tensor::scalar(a * (s.params["w"][0] - b))}}, plain(lr, m, wd));
      v = m * v - lr * (g + wd * w);
      w = w + v;
      CHECK(s.params["w"][0] == w);
      CHECK(s.velocity["w"][0] == v);
    }
  }
  SUBCASE("weight decay folds into the gradient") {
    Rng rng(1);
    const Tensor w0 = random_tensor({5}, rng), v0 = random_tensor({5}, rng), g = random_tensor({5}, rng);
    const double lambda = 0.03;
    TrainState a, b;
    a.params["p"] = b.params["p"] = w0;
    a.velocity["p"] = b.velocity["p"] = v0;
    sgd_momentum_step(a, {{"p", g}}, plain(0.1, 0.9, lambda));
    Tensor folded = g;
    folded.data += lambda * w0.data;
    sgd_momentum_step(b, {{"p", folded}}, plain(0.1, 0.9, 0.0));
    CHECK((a.params["p"].data - b.params["p"].data).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("bad gradients") {
    TrainState s = scalar_state(1.0);
    try {
      sgd_momentum_step(s, {{"w", Tensor::scalar(NAN)}}, plain(0.1));
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
    CHECK(s.step == 0);
    CHECK_THROWS_AS(sgd_momentum_step(s, {{"q", Tensor::scalar(0.0)}}, plain(0.1)), ContractError);
    CHECK_THROWS_AS(sgd_momentum_step(s, {{"w", Tensor({2})}}, plain(0.1)), DimensionError);
  }
}

TEST_CASE("gain schedule") {
  CHECK(gain_schedule(5) == std::vector<double>{0, 0.25, 0.5, 0.75, 1.0});
  CHECK(gain_schedule(1) == std::vector<double>{1.0});
  CHECK(gain_schedule(2) == std::vector<double>{0, 1});
  CHECK_THROWS_AS(gain_schedule(0), ParameterError);
}

TEST_CASE("network expansion") {
  const ArchitectureSpec src = small_conv(1);
  const ParamSet p = random_params(src, 2);
  Rng rng(3);
  const Tensor f = random_tensor({1, 16, 16}, rng, 0, 1);

  const ParamSet p30 = expand_network(src, p, 30);
  CHECK(identical(logits_of(expanded_spec(src, 30), p30, std::vector<Tensor>(30, f)), logits_of(src, p, {f})));
  CHECK(parameter_count(p30) == parameter_count(p));

  const ParamSet chained = expand_network(expanded_spec(src, 4), expand_network(src, p, 4), 8);
  const ParamSet direct = expand_network(src, p, 8);
  REQUIRE(chained.size() == direct.size());
  for (const auto& [name, t] : direct) CHECK(identical(chained.at(name), t));

  SUBCASE("every pooling kind reproduces constant-in-time outputs") {
    for (ArchKind kind : pooling_kinds()) {
      CAPTURE(kind_name(kind));
      ArchitectureSpec s = make_spec(kind, preset(kind == ArchKind::InceptionTapPooling ? "micro_inception_tap"
                                                                                         : "micro_alex",
                                                  {1, 16, 16}),
                                     4, 2, {12, 8});
      s.temporal_window = 2;
      s.temporal_stride = 2;
      const ParamSet sp = random_params(s, 4);
      const ArchitectureSpec t = expanded_spec(s, 16);
      const ParamSet tp = expand_network(s, sp, t);
      const Tensor before = logits_of(s, sp, {f, f});
      const Tensor after = logits_of(t, tp, std::vector<Tensor>(16, f));
      if (kind == ArchKind::LocalPooling) {
        CHECK(parameter_count(tp) > parameter_count(sp));
        CHECK((before.data - after.data).cwiseAbs().maxCoeff() < 1e-6);
      } else {
        CHECK(parameter_count(tp) == parameter_count(sp));
        CHECK(identical(before, after));
      }
    }
  }

  SUBCASE("mismatched specs are rejected") {
    ArchitectureSpec late = make_spec(ArchKind::LatePooling, preset("micro_alex", {1, 16, 16}), 4, 8, {16});
    CHECK_THROWS_AS(expand_network(src, p, late), ContractError);
    ArchitectureSpec wider = expanded_spec(src, 8);
    wider.fc_widths = {20};
    CHECK_THROWS_AS(expand_network(src, p, wider), ContractError);
    const ArchitectureSpec lstm = make_spec(ArchKind::Lstm, preset("micro_alex", {1, 16, 16}), 4, 1);
    CHECK_THROWS_AS(expand_network(lstm, init_params(lstm, 1), 4), ContractError);
  }
}

TEST_CASE("training loop contracts") {
  const ArchitectureSpec spec = small_conv(4);

  SUBCASE("zero learning rate leaves parameters unchanged") {
    const TrainResult r = train_loop(train_split(), spec, plain(0.0, 0.9, 0.1), options(5), 7);
    const ParamSet init = init_params(spec, 7);
    for (const auto& [name, t] : init) CHECK(identical(r.state.params.at(name), t));
    CHECK(r.log.size() == 5);
  }

  SUBCASE("identical seeds give identical runs, with or without threads") {
    const OptimizerConfig c = plain(0.01, 0.9, 5e-4);
    const TrainResult a = train_loop(train_split(), spec, c, options(6), 11);
    const TrainResult b = train_loop(train_split(), spec, c, options(6), 11);
    TrainOptions threaded = options(6);
    threaded.threads = 3;
    const TrainResult t = train_loop(train_split(), spec, c, threaded, 11);
    std::ostringstream ca, cb, ct;
    write_metrics_csv(ca, a.log);
    write_metrics_csv(cb, b.log);
    write_metrics_csv(ct, t.log);
    CHECK(ca.str() == cb.str());
    CHECK(ca.str() == ct.str());
    for (const auto& [name, w] : a.state.params) {
      CHECK(identical(w, b.state.params.at(name)));
      CHECK(identical(w, t.state.params.at(name)));
    }
    const TrainResult other = train_loop(train_split(), spec, c, options(6), 12);
    CHECK_FALSE(identical(other.state.params.at("out.weight"), a.state.params.at("out.weight")));
  }

  SUBCASE("resuming continues the same trajectory") {
    const OptimizerConfig c = plain(0.01, 0.9, 5e-4);
    const TrainResult full = train_loop(train_split(), spec, c, options(12), 5);
    const TrainResult half = train_loop(train_split(), spec, c, options(5), 5);
    const TrainResult rest = train_loop(train_split(), spec, c, options(12), half.state);
    CHECK(rest.state.step == 12);
    for (const auto& [name, w] : full.state.params) CHECK(identical(w, rest.state.params.at(name)));
    for (std::size_t i = 0; i < rest.log.size(); ++i) CHECK(rest.log[i].loss == full.log[i + 5].loss);
  }

  SUBCASE("frozen encoder") {
    ArchitectureSpec frozen = spec;
    frozen.freeze_encoder = true;
    const TrainResult r = train_loop(train_split(), frozen, plain(0.05, 0.9), options(3), 9);
    const ParamSet init = init_params(frozen, 9);
    for (const auto& [name, t] : init) {
      CAPTURE(name);
      if (name.rfind("encoder.", 0) == 0)
        CHECK(identical(r.state.params.at(name), t));
      else
        CHECK_FALSE(identical(r.state.params.at(name), t));
    }
  }

  SUBCASE("divergence reports the step and last checkpoint") {
    TrainOptions o = options(50);
    o.checkpoint_every = 1;
    o.checkpoint = [](const TrainState& s) { return "ckpt-" + std::to_string(s.step); };
    try {
      train_loop(train_split(), spec, plain(1e150, 0.9), o, 3);
      FAIL("expected divergence");
    } catch (const TrainingError& e) {
      CHECK(e.step() >= 1);
      CHECK(e.last_checkpoint() == "ckpt-" + std::to_string(e.step()));
    }
  }

  SUBCASE("target loss stops early") {
    TrainOptions o = options(50);
    o.target_loss = 100.0;
    CHECK(train_loop(train_split(), spec, plain(0.01), o, 3).log.size() == 1);
  }

  SUBCASE("metrics csv") {
    std::ostringstream out;
    write_metrics_csv(out, {{0, 1.5, 0.01, std::nullopt}, {1, 0.25, 0.01, 0.5}});
    CHECK(out.str() == "step,loss,lr,eval_hit1\n0,1.5,0.01,\n1,0.25,0.01,0.5\n");
  }
}

TEST_CASE("two hundred steps halve the loss on the single-frame task") {
  // pilot run (seed 1): first-step loss 1.436, mean of the last ten steps 0.022
  const ArchitectureSpec spec = small_conv(4);
  const TrainResult r = train_loop(train_split(), spec, plain(0.02, 0.9, 5e-4), options(200), 1);
  double tail = 0;
  for (std::size_t i = r.log.size() - 10; i < r.log.size(); ++i) tail += r.log[i].loss;
  tail /= 10;
  MESSAGE("first loss " << r.log.front().loss << ", final mean " << tail);
  CHECK(tail <= 0.5 * r.log.front().loss);
}
