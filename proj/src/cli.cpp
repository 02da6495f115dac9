#include "snagg/cli.hpp"

#include "snagg/checkpoint.hpp"
#include "snagg/config.hpp"
#include "snagg/dataset.hpp"
#include "snagg/eval.hpp"
#include "snagg/flow.hpp"
#include "snagg/grad_check.hpp"
#include "snagg/training.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace snagg {
namespace {

namespace fs = std::filesystem;

int env_threads(int fallback) {
  if (const char* v = std::getenv("SNAGG_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end && *end == '\0' && n > 0) return static_cast<int>(n);
    throw ConfigError("SNAGG_THREADS must be a positive integer, got '" + std::string(v) + "'");
  }
  return fallback;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("short write to " + file.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream ss;
  write_csv_header(ss);
  write_csv_row(ss, r);
  return ss.str();
}

// ---- gen-data

struct GenArgs {
  std::string config;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  const RunConfig rc = parse_run_config(read_key_values(a.config), false);
  if (rc.dataset_path.empty()) throw ConfigError("missing required config key 'dataset.path'");
  const DatasetContents contents = [&] {
    try {
      return generate(rc.task);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }();
  write_dataset(rc.dataset_path, contents, a.force);
  out << "wrote " << contents.entries.size() << " videos (" << contents.task << ") to " << rc.dataset_path.string()
      << "\n";
  return kExitOk;
}

// ---- train

struct TrainArgs {
  std::string config;
  std::optional<long> max_steps;
  std::string resume;
  std::string init_from;
  int threads = 1;
};

KeyValues checkpoint_extra(const RunConfig& rc) {
  KeyValues kv;
  write_augment(rc.train.augment, kv);
  kv["stream"] = rc.stream;
  kv["eval.num_samples"] = std::to_string(rc.predict.num_samples);
  kv["eval.fusion"] = std::string(fusion_name(rc.predict.fusion));
  return kv;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = parse_run_config(read_key_values(a.config), true);
  if (rc.dataset_path.empty()) throw ConfigError("missing required config key 'dataset.path'");
  if (rc.output_dir.empty()) throw ConfigError("missing required config key 'output.dir'");
  if (rc.stream == "two_stream") throw ConfigError("train: stream must be image or flow (train each stream separately)");
  if (a.max_steps) rc.train.max_steps = *a.max_steps;
  rc.train.threads = env_threads(a.threads);

  const DatasetContents contents = read_dataset(rc.dataset_path);
  const Dataset train = select(contents, "train", rc.stream);
  const Dataset test = select(contents, "test", rc.stream);
  if (train.videos.empty()) throw DataError(rc.dataset_path.string() + ": no '" + rc.stream + "' training videos");
  ensure_dir(rc.output_dir);

  const int lr_n = lr_frames(rc.spec, rc.optimizer);
  TrainState state;
  if (!a.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(a.resume);
    if (!(ckpt.spec == rc.spec)) throw ConfigError("--resume: checkpoint model differs from the config model");
    state = std::move(ckpt.state);
    out << "resumed at step " << state.step << "\n";
  } else {
    ParamSet params = init_params(rc.spec, rc.seed);
    if (!a.init_from.empty()) {
      const Checkpoint src = load_checkpoint(a.init_from);
      const std::size_t loaded = load_compatible(params, src.state.params);
      out << "init-from: loaded " << loaded << " of " << params.size() << " parameter tensors\n";
    }
    state = make_state(std::move(params), rc.optimizer, rc.seed, lr_n);
  }

  const KeyValues extra = checkpoint_extra(rc);
  TrainOptions opts = rc.train;
  if (!test.videos.empty()) opts.eval_data = &test;
  opts.checkpoint = [&](const TrainState& s) {
    const fs::path file = rc.output_dir / ("step_" + std::to_string(s.step) + ".snagg");
    save_checkpoint(file, {rc.spec, s, extra});
    return file.string();
  };
  TrainResult result;
  try {
    result = train_loop(train, rc.spec, rc.optimizer, opts, std::move(state));
  } catch (const TrainingError& e) {
    err << "training diverged: " << e.what();
    if (!e.last_checkpoint().empty()) err << " (last good checkpoint: " << e.last_checkpoint() << ")";
    err << "\n";
    return kExitDiverged;
  }

  const fs::path final_ckpt = rc.output_dir / "final.snagg";
  save_checkpoint(final_ckpt, {rc.spec, result.state, extra});
  std::ostringstream metrics;
  write_metrics_csv(metrics, result.log);
  write_text(rc.output_dir / "metrics.csv", metrics.str());
  out << "trained to step " << result.state.step << "; checkpoint " << final_ckpt.string() << "\n";

  if (!test.videos.empty()) {
    const StreamPredictions preds = predict_dataset(rc.spec, result.state.params, test, rc.predict, rc.seed);
    const EvalReport report = make_report(std::string(kind_name(rc.spec.kind)), rc.spec.frames, preds, test.num_classes);
    const std::string csv = report_csv(report);
    write_text(rc.output_dir / "eval.csv", csv);
    out << csv;
  }
  return kExitOk;
}

// ---- expand

struct ExpandArgs {
  std::string checkpoint;
  int frames = 0;
  std::string output;
  std::string kind;
};

int cmd_expand(const ExpandArgs& a, std::ostream& out) {
  const Checkpoint src = load_checkpoint(a.checkpoint);
  ArchitectureSpec target = src.spec;
  if (!a.kind.empty()) target.kind = parse_kind(a.kind);
  target.frames = a.frames;
  Checkpoint dst;
  dst.spec = target;
  const ParamSet params = expand_network(src.spec, src.state.params, target);
  dst.state = make_state(params, OptimizerConfig{}, src.state.seed);
  dst.state.current_lr = src.state.current_lr;
  dst.extra = src.extra;
  dst.extra["augment.frames"] = std::to_string(a.frames);
  save_checkpoint(a.output, dst);
  out << "expanded " << kind_name(src.spec.kind) << " from " << src.spec.frames << " to " << a.frames
      << " frames: " << a.output << "\n";
  return kExitOk;
}

// ---- eval

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::string stream;
  std::string flow_checkpoint;
  double weight = 0.5;
  std::optional<int> num_samples;
  std::string fusion;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string method;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  PredictOptions opts;
  opts.augment = read_augment(ckpt.extra, AugmentConfig{ckpt.spec.frames, 0, 0, 0, 0, false});
  if (auto it = ckpt.extra.find("eval.num_samples"); it != ckpt.extra.end()) opts.num_samples = std::stoi(it->second);
  if (auto it = ckpt.extra.find("eval.fusion"); it != ckpt.extra.end()) opts.fusion = parse_fusion(it->second);
  if (a.num_samples) opts.num_samples = *a.num_samples;
  if (!a.fusion.empty()) opts.fusion = parse_fusion(a.fusion);
  const std::uint64_t seed = a.seed.value_or(ckpt.state.seed);
  std::string stream = a.stream;
  if (stream.empty()) stream = ckpt.extra.count("stream") ? ckpt.extra.at("stream") : "image";

  const DatasetContents contents = read_dataset(a.dataset);
  const Dataset data = select(contents, a.split, stream);
  if (data.videos.empty()) throw DataError(a.dataset + ": no '" + stream + "' videos in split '" + a.split + "'");
  StreamPredictions preds = predict_dataset(ckpt.spec, ckpt.state.params, data, opts, seed);
  std::string method = std::string(kind_name(ckpt.spec.kind));

  if (!a.flow_checkpoint.empty()) {
    const Checkpoint flow_ckpt = load_checkpoint(a.flow_checkpoint);
    PredictOptions flow_opts = opts;
    flow_opts.augment = read_augment(flow_ckpt.extra, opts.augment);
    const Dataset flow = select(contents, a.split, "flow");
    if (flow.videos.empty()) throw DataError(a.dataset + ": no 'flow' videos in split '" + a.split + "'");
    const StreamPredictions flow_preds = predict_dataset(flow_ckpt.spec, flow_ckpt.state.params, flow, flow_opts, seed);
    preds = fuse_streams(preds, flow_preds, a.weight);
    method = "two_stream";
  }
  if (!a.method.empty()) method = a.method;
  const EvalReport report = make_report(method, ckpt.spec.frames, preds, data.num_classes);
  const std::string csv = report_csv(report);
  out << csv;
  write_text(a.output.empty() ? a.checkpoint + ".eval.csv" : a.output, csv);
  return kExitOk;
}

// ---- flow-encode

struct FlowArgs {
  std::string input;
  std::string output;
  int ratio = 2;
  int iterations = 100;
  double smoothness = 0.1;
  bool force = false;
};

int cmd_flow_encode(const FlowArgs& a, std::ostream& out) {
  const DatasetContents in = read_dataset(a.input);
  DatasetContents flow;
  flow.task = in.task;
  flow.num_classes = in.num_classes;
  for (const DatasetEntry& e : in.entries)
    if (e.stream == "image")
      flow.entries.push_back({e.split, "flow", flow_video(e.sample, a.ratio, a.iterations, a.smoothness)});
  write_dataset(a.output, flow, a.force);
  out << "encoded " << flow.entries.size() << " flow videos to " << a.output << "\n";
  return kExitOk;
}

// ---- grad-check

struct GradArgs {
  std::string arch = "all";
  double tolerance = 1e-4;
  std::string corrupt;
  int max_entries = 0;
};

int cmd_grad_check(const GradArgs& a, std::ostream& out) {
  std::vector<ArchKind> kinds;
  if (a.arch == "all") {
    kinds = pooling_kinds();
    kinds.push_back(ArchKind::Lstm);
  } else {
    kinds.push_back(parse_kind(a.arch));
  }
  GradCheckOptions opts;
  opts.tolerance = a.tolerance;
  opts.corrupt = a.corrupt;
  opts.max_entries = a.max_entries;
  bool all_pass = true;
  for (ArchKind k : kinds) {
    const GradCheckReport r = grad_check(micro_spec(k), opts);
    print_report(out, r, a.tolerance);
    all_pass = all_pass && r.pass();
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"snagg: temporal aggregation networks for video classification"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset from a config file");
  gen_cmd->add_option("--config", gen.config, "Config file")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing dataset directory");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train.config, "Config file")->required();
  train_cmd->add_option("--max-steps", train.max_steps, "Override train.max_steps");
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint");
  train_cmd->add_option("--init-from", train.init_from, "Initialize shape-compatible parameters from a checkpoint");
  train_cmd->add_option("--threads", train.threads, "Worker threads for per-example gradients")
      ->check(CLI::PositiveNumber);

  ExpandArgs expand;
  auto* expand_cmd = app.add_subcommand("expand", "Expand a trained network to more frames");
  expand_cmd->add_option("--checkpoint", expand.checkpoint, "Source checkpoint")->required();
  expand_cmd->add_option("--frames", expand.frames, "Target frame count")->required();
  expand_cmd->add_option("--output", expand.output, "Output checkpoint")->required();
  expand_cmd->add_option("--kind", expand.kind, "Target architecture kind (must match the source)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "Split to evaluate");
  eval_cmd->add_option("--stream", ev.stream, "Stream of the main checkpoint (image or flow)");
  eval_cmd->add_option("--flow-checkpoint", ev.flow_checkpoint, "Flow-stream checkpoint for two-stream fusion");
  eval_cmd->add_option("--weight", ev.weight, "Image-stream weight in two-stream fusion")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--num-samples", ev.num_samples, "Augmented clips per video (0: whole video)");
  eval_cmd->add_option("--fusion", ev.fusion, "LSTM fusion: last_step, max_pool, sum_then_max, weighted_sum");
  eval_cmd->add_option("--seed", ev.seed, "Sampling seed (default: checkpoint seed)");
  eval_cmd->add_option("--output", ev.output, "CSV file (default: <checkpoint>.eval.csv)");
  eval_cmd->add_option("--method", ev.method, "Method label in the CSV");

  FlowArgs flow;
  auto* flow_cmd = app.add_subcommand("flow-encode", "Compute flow images for every video of a dataset");
  flow_cmd->add_option("--input", flow.input, "Dataset directory with raw frames")->required();
  flow_cmd->add_option("--output", flow.output, "Output dataset directory")->required();
  flow_cmd->add_option("--ratio", flow.ratio, "Raw frames per flow image");
  flow_cmd->add_option("--iterations", flow.iterations, "Solver iterations");
  flow_cmd->add_option("--smoothness", flow.smoothness, "Solver smoothness weight");
  flow_cmd->add_flag("--force", flow.force, "Overwrite an existing output directory");

  GradArgs grad;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every parameter block");
  grad_cmd->add_option("--arch", grad.arch, "Architecture kind or 'all'");
  grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error");
  grad_cmd->add_option("--corrupt", grad.corrupt, "Scale the analytic gradient of this parameter (test hook)");
  grad_cmd->add_option("--max-entries", grad.max_entries, "Entries checked per block (0: all)");

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(train, out, err);
    if (*expand_cmd) return cmd_expand(expand, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*flow_cmd) return cmd_flow_encode(flow, out);
    if (*grad_cmd) return cmd_grad_check(grad, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParameterError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "invalid request: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const TrainingError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace snagg
