#include "snagg/training.hpp"

#include "snagg/ops.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <thread>

namespace snagg {

void validate(const OptimizerConfig& cfg) {
  if (!(cfg.base_lr >= 0)) throw ParameterError("optimizer: base_lr must be non-negative");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw ParameterError("optimizer: momentum must lie in [0, 1)");
  if (!(cfg.weight_decay >= 0)) throw ParameterError("optimizer: weight_decay must be non-negative");
  if (!(cfg.lr_decay_factor > 0 && cfg.lr_decay_factor <= 1))
    throw ParameterError("optimizer: lr_decay_factor must lie in (0, 1]");
  if (cfg.decay_interval_steps < 1) throw ParameterError("optimizer: decay_interval_steps must be positive");
}

double learning_rate(const OptimizerConfig& cfg, long step, int frames) {
  const double scale = cfg.lstm_lr_scale_by_frames ? static_cast<double>(frames) : 1.0;
  return cfg.base_lr * scale * std::pow(cfg.lr_decay_factor, static_cast<double>(step / cfg.decay_interval_steps));
}

int lr_frames(const ArchitectureSpec& spec, const OptimizerConfig& cfg) {
  return spec.kind == ArchKind::Lstm && cfg.lstm_lr_scale_by_frames ? spec.frames : 1;
}

TrainState make_state(ParamSet params, const OptimizerConfig& cfg, std::uint64_t seed, int frames) {
  TrainState s;
  for (const auto& [name, t] : params) s.velocity[name] = Tensor(t.shape);
  s.params = std::move(params);
  s.seed = seed;
  s.current_lr = learning_rate(cfg, 0, frames);
  return s;
}

void sgd_momentum_step(TrainState& state, const ParamSet& grads, const OptimizerConfig& cfg, int frames) {
  for (const auto& [name, g] : grads) {
    auto p = state.params.find(name);
    if (p == state.params.end()) throw ContractError("sgd: gradient for unknown parameter '" + name + "'");
    if (g.shape != p->second.shape)
      throw DimensionError("sgd: gradient of '" + name + "' has shape " + to_string(g.shape) + ", parameter has " +
                           to_string(p->second.shape));
    if (!g.all_finite()) throw NumericError("sgd: non-finite gradient in parameter '" + name + "'");
  }
  const double lr = learning_rate(cfg, state.step, frames);
  for (const auto& [name, g] : grads) {
    Vector& w = state.params.at(name).data;
    auto [v, inserted] = state.velocity.try_emplace(name, Tensor(g.shape));
    (void)inserted;
    v->second.data = cfg.momentum * v->second.data - lr * (g.data + cfg.weight_decay * w);
    w += v->second.data;
  }
  ++state.step;
  state.current_lr = learning_rate(cfg, state.step, frames);
}

std::vector<double> gain_schedule(int frames) {
  if (frames < 1) throw ParameterError("gain_schedule: T must be at least 1");
  if (frames == 1) return {1.0};
  std::vector<double> g(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) g[static_cast<std::size_t>(t)] = static_cast<double>(t) / (frames - 1);
  return g;
}

ArchitectureSpec expanded_spec(const ArchitectureSpec& src, int target_frames) {
  ArchitectureSpec t = src;
  t.frames = target_frames;
  validate(t);
  return t;
}

ParamSet expand_network(const ArchitectureSpec& src, const ParamSet& params, const ArchitectureSpec& target) {
  if (src.kind != target.kind)
    throw ContractError("expand: cannot expand " + std::string(kind_name(src.kind)) + " into " +
                        std::string(kind_name(target.kind)));
  if (!is_pooling(src.kind)) throw ContractError("expand: only pooling architectures are expanded");
  ArchitectureSpec same = target;
  same.frames = src.frames;
  if (!(same == src)) throw ContractError("expand: source and target differ in more than the frame count");
  validate(target);
  ParamSet out = params;
  if (src.kind == ArchKind::LocalPooling) {
    const int n_src = local_window_count(src), n_new = local_window_count(target);
    const Tensor& w = params.at("out.weight");
    const int k = w.dim(0), block = w.dim(1) / n_src;
    RowMatrix summed = RowMatrix::Zero(k, block);
    for (int j = 0; j < n_src; ++j) summed += w.matrix().middleCols(j * block, block);
    Tensor tiled({k, block * n_new});
    for (int j = 0; j < n_new; ++j) tiled.matrix().middleCols(j * block, block) = summed / n_new;
    out["out.weight"] = std::move(tiled);
  }
  return out;
}

ParamSet expand_network(const ArchitectureSpec& src, const ParamSet& params, int target_frames) {
  return expand_network(src, params, expanded_spec(src, target_frames));
}

ExampleGradient example_gradient(const ArchitectureSpec& spec, const ParamSet& params, std::span<const Tensor> frames,
                                 int label, Rng& dropout_rng) {
  Tape tape;
  ParamBinding bind = make_binding(tape, spec, params);
  const LogitsOutput out = forward(bind, spec, frames, Mode::Train, dropout_rng);
  Var loss = training_loss(spec, out, label);
  tape.backward(loss);
  return {loss.value()[0], tape.parameter_grads()};
}

void validate(const TrainOptions& opts) {
  if (opts.batch_size < 1) throw ParameterError("train: batch_size must be positive");
  if (opts.max_steps < 0) throw ParameterError("train: max_steps must be non-negative");
  if (opts.threads < 1) throw ParameterError("train: threads must be positive");
  if (opts.eval_every < 0 || opts.checkpoint_every < 0)
    throw ParameterError("train: eval_every and checkpoint_every must be non-negative");
}

double clip_accuracy(const ArchitectureSpec& spec, const ParamSet& params, const Dataset& data,
                     const AugmentConfig& augment) {
  std::vector<Vector> preds;
  std::vector<std::vector<int>> labels;
  for (const VideoSample& v : data.videos) {
    preds.push_back(predict_clip(spec, params, apply_augment(v, augment, center_draw(v, augment))));
    labels.push_back(v.labels);
  }
  return hit_at_k(preds, labels, 1);
}

TrainResult train_loop(const Dataset& data, const ArchitectureSpec& spec, const OptimizerConfig& cfg,
                       const TrainOptions& opts, TrainState state) {
  validate(spec);
  validate(cfg);
  validate(opts);
  if (data.videos.empty()) throw ParameterError("train: dataset is empty");
  const std::size_t n = data.videos.size();
  const auto batch = static_cast<std::size_t>(opts.batch_size);
  const int frames_for_lr = lr_frames(spec, cfg);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  std::string last_checkpoint;
  TrainResult result;

  while (state.step < opts.max_steps) {
    const long step = state.step;
    std::vector<const VideoSample*> videos(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::uint64_t i = static_cast<std::uint64_t>(step) * batch + b;
      if (i / n != cached_epoch) {
        cached_epoch = i / n;
        order = shuffled_order(n, state.seed, cached_epoch);
      }
      videos[b] = &data.videos[order[i % n]];
    }

    std::vector<ExampleGradient> per_example(batch);
    std::vector<std::string> failures(batch);
    auto work = [&](std::size_t b) {
      const std::uint64_t i = static_cast<std::uint64_t>(step) * batch + b;
      try {
        Rng aug = Rng::derive(state.seed, "augment", i);
        const std::vector<Tensor> clip = augment_sample(*videos[b], opts.augment, aug).frames;
        Rng drop = Rng::derive(state.seed, "dropout", i);
        per_example[b] = example_gradient(spec, state.params, clip, videos[b]->label(), drop);
      } catch (const NumericError& e) {
        failures[b] = e.what();
      }
    };
    const std::size_t workers = std::min<std::size_t>(batch, static_cast<std::size_t>(opts.threads));
    if (workers <= 1) {
      for (std::size_t b = 0; b < batch; ++b) work(b);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t b = w; b < batch; b += workers) work(b);
        });
      for (auto& t : pool) t.join();
    }
    for (const std::string& f : failures)
      if (!f.empty()) throw TrainingError("diverged at step " + std::to_string(step) + ": " + f, step, last_checkpoint);

    double loss = 0.0;
    ParamSet grads = std::move(per_example[0].grads);
    loss += per_example[0].loss;
    for (std::size_t b = 1; b < batch; ++b) {
      loss += per_example[b].loss;
      for (auto& [name, g] : per_example[b].grads) grads.at(name).data += g.data;
    }
    loss /= static_cast<double>(batch);
    for (auto& [name, g] : grads) g.data /= static_cast<double>(batch);
    if (!std::isfinite(loss))
      throw TrainingError("diverged at step " + std::to_string(step) + ": loss is not finite", step, last_checkpoint);

    MetricRecord rec{step, loss, learning_rate(cfg, step, frames_for_lr), std::nullopt};
    try {
      sgd_momentum_step(state, grads, cfg, frames_for_lr);
    } catch (const NumericError& e) {
      throw TrainingError("diverged at step " + std::to_string(step) + ": " + e.what(), step, last_checkpoint);
    }
    if (opts.eval_every > 0 && opts.eval_data && state.step % opts.eval_every == 0)
      rec.eval_hit1 = clip_accuracy(spec, state.params, *opts.eval_data, opts.augment);
    result.log.push_back(rec);
    if (opts.on_record) opts.on_record(rec);
    if (opts.checkpoint_every > 0 && opts.checkpoint && state.step % opts.checkpoint_every == 0)
      last_checkpoint = opts.checkpoint(state);
    if (opts.target_loss && loss <= *opts.target_loss) break;
  }
  result.state = std::move(state);
  return result;
}

TrainResult train_loop(const Dataset& data, const ArchitectureSpec& spec, const OptimizerConfig& cfg,
                       const TrainOptions& opts, std::uint64_t seed) {
  return train_loop(data, spec, cfg, opts, make_state(init_params(spec, seed), cfg, seed, lr_frames(spec, cfg)));
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& log) {
  out << "step,loss,lr,eval_hit1\n";
  char buf[128];
  for (const MetricRecord& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,", r.step, r.loss, r.lr);
    out << buf;
    if (r.eval_hit1) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.eval_hit1);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace snagg
