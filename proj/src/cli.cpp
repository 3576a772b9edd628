#include "e2eload/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "e2eload/config.hpp"
#include "e2eload/formats.hpp"
#include "e2eload/selftest.hpp"

namespace e2eload {
namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string checkpoint;
  std::string input;
  std::string labels;
};

struct InferOptions {
  std::string mode;
  std::string preset;
  bool dump_attention = false;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.task.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.model.validate();
  return cfg;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  return f;
}

ModelWeights weights_for(const GlobalOptions& g, const ModelConfig& cfg, std::uint64_t seed) {
  if (!g.checkpoint.empty()) return load_checkpoint(g.checkpoint, cfg);
  return ModelWeights::initialize(cfg, seed);
}

void write_labels_csv(const fs::path& path, std::span<const Index> labels) {
  std::ofstream f = open_output(path);
  f << "chunk_index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) f << i << ',' << labels[i] << '\n';
}

std::vector<Index> read_labels_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open labels '" + path.string() + "'");
  std::string line;
  std::getline(f, line);
  std::vector<Index> labels;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      const auto idx = std::stoll(line.substr(0, comma));
      if (idx != static_cast<long long>(labels.size())) throw std::invalid_argument("chunk indices out of order");
      labels.push_back(std::stoll(line.substr(comma + 1)));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad label row (" + e.what() + ")");
    }
  }
  return labels;
}

/// The input stream, or a synthetic stream generated from the task settings.
SyntheticStream load_stream(const GlobalOptions& g, const RunConfig& cfg) {
  if (g.input.empty()) return generate_stream(cfg.task, cfg.model.chunk());
  SyntheticStream s;
  s.frames = read_rsv(g.input);
  s.tau = cfg.model.tau;
  if (s.frames.height != cfg.model.frame_height || s.frames.width != cfg.model.frame_width) {
    throw ConfigError("input frames are " + std::to_string(s.frames.width) + "x" + std::to_string(s.frames.height) +
                      ", the model expects " + std::to_string(cfg.model.frame_width) + "x" +
                      std::to_string(cfg.model.frame_height));
  }
  const Index chunks = s.frames.count / s.tau;
  if (!g.labels.empty()) {
    s.labels = read_labels_csv(g.labels);
    if (static_cast<Index>(s.labels.size()) != chunks) {
      throw FormatError("labels cover " + std::to_string(s.labels.size()) + " chunks, stream has " +
                        std::to_string(chunks));
    }
  } else {
    s.labels.assign(static_cast<std::size_t>(chunks), 0);
  }
  return s;
}

int cmd_gen_data(const GlobalOptions& g, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  const SyntheticStream s = generate_stream(cfg.task, cfg.model.chunk());
  const fs::path dir(g.out_dir);
  write_rsv(dir / "stream.rsv", s.frames);
  write_labels_csv(dir / "labels.csv", s.labels);
  out << "wrote " << s.chunk_count() << " chunks (" << s.frames.count << " frames, " << s.cue_chunks.size()
      << " events) to " << (dir / "stream.rsv").string() << "\n";
  return kExitOk;
}

int cmd_train(const GlobalOptions& g, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  const SyntheticStream train_stream = generate_stream(cfg.task, cfg.model.chunk());
  SynthTaskConfig val_task = cfg.task;
  val_task.seed = cfg.seed + 1;
  val_task.stream_len_chunks = cfg.validation_chunks;
  const SyntheticStream validation = generate_stream(val_task, cfg.model.chunk());

  Trainer trainer(cfg.model, ModelWeights::initialize(cfg.model, cfg.seed), cfg.train);
  const fs::path dir(g.out_dir);
  std::ofstream epochs = open_output(dir / "epochs.csv");
  epochs << "epoch,mean_loss,validation_accuracy,validation_map\n";
  const TrainingRun run = run_training(trainer, train_stream, &validation, [&](const EpochReport& r,
                                                                               const ModelWeights& w) {
    save_checkpoint(dir / ("checkpoint_epoch" + std::to_string(r.epoch) + ".e2ew"), w);
    epochs << r.epoch << ',' << format_double(r.mean_loss) << ',' << format_double(r.validation_accuracy) << ','
           << format_double(r.validation_map) << '\n';
    out << "epoch " << r.epoch << ": loss " << r.mean_loss << ", validation accuracy " << r.validation_accuracy
        << ", mAP " << r.validation_map << "\n";
  });
  save_checkpoint(dir / "model.e2ew", trainer.weights());
  std::ofstream losses = open_output(dir / "losses.csv");
  losses << "step,loss\n";
  for (std::size_t i = 0; i < run.losses.size(); ++i) losses << i << ',' << format_double(run.losses[i]) << '\n';
  out << "wrote " << (dir / "model.e2ew").string() << "\n";
  return kExitOk;
}

int cmd_infer(const GlobalOptions& g, const InferOptions& io, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  if (!io.preset.empty()) cfg.preset = parse_preset(io.preset);
  if (!io.mode.empty()) cfg.mode = parse_mode(io.mode);
  EngineOptions options = cfg.engine_options();
  options.dump_attention = io.dump_attention;

  const SyntheticStream stream = load_stream(g, cfg);
  auto weights = std::make_shared<const ModelWeights>(weights_for(g, cfg.model, cfg.seed));
  auto engine = make_engine(cfg.model, weights, options);

  const fs::path dir(g.out_dir);
  std::vector<StepOutput> steps;
  std::vector<std::int64_t> latencies;
  Matrix probabilities(stream.chunk_count(), cfg.model.streams.num_classes);
  for (Index i = 0; i < stream.chunk_count(); ++i) {
    StepOutput s = engine->step(stream.chunk(i));
    probabilities.row(i) = s.probabilities;
    if (i >= cfg.model.streams.t_short) latencies.push_back(s.latency_ns);
    if (io.dump_attention) {
      std::ofstream f = open_output(dir / "attention" / ("step_" + std::to_string(s.chunk_index) + ".csv"));
      write_attention_csv(f, s);
      s.attention_dump.clear();
    }
    steps.push_back(std::move(s));
  }
  std::ofstream pred = open_output(dir / "predictions.csv");
  write_prediction_csv(pred, steps, cfg.model.streams.num_classes);

  const LatencyStats latency = latency_stats(latencies);
  const bool labelled = std::any_of(stream.labels.begin(), stream.labels.end(), [](Index l) { return l != 0; });
  ClassificationReport report;
  if (labelled) report = evaluate_predictions(probabilities, stream.labels);
  std::ofstream metrics = open_output(dir / "metrics.csv");
  write_metric_csv(metrics, report, latency);
  out << "infer: " << stream.chunk_count() << " chunks, mode " << mode_name(options.mode) << ", long branch "
      << (options.long_branch ? "on" : "off");
  if (labelled) out << ", mAP " << report.map << ", accuracy " << report.accuracy;
  out << ", " << latency.steps_per_second << " steps/s\n";
  return kExitOk;
}

int cmd_bench(const GlobalOptions& g, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  const fs::path dir(g.out_dir);
  std::ostringstream csv;
  csv << "mode,T_S,mean_ns,p95_ns,steps_per_sec,pair_count\n";
  for (Index t_short : cfg.bench_t_short) {
    ModelConfig model = cfg.model;
    model.streams.t_short = t_short;
    model.validate();
    const bool use_checkpoint = !g.checkpoint.empty() && t_short == cfg.model.streams.t_short;
    auto weights = std::make_shared<const ModelWeights>(
        use_checkpoint ? load_checkpoint(g.checkpoint, model) : ModelWeights::initialize(model, cfg.seed));
    const Index warmup = cfg.bench_warmup_chunks > 0 ? cfg.bench_warmup_chunks : t_short;
    RunConfig stream_cfg = cfg;
    stream_cfg.task.stream_len_chunks = cfg.bench_stream_chunks > 0 ? cfg.bench_stream_chunks
                                                                    : std::max<Index>(4 * t_short, warmup + 8);
    stream_cfg.task.stream_len_chunks = std::max(stream_cfg.task.stream_len_chunks, stream_cfg.task.slot_length());
    const SyntheticStream stream = load_stream(g, stream_cfg);
    if (stream.chunk_count() < 3 * t_short) {
      throw ConfigError("bench: stream of " + std::to_string(stream.chunk_count()) + " chunks is shorter than 3 * T_S = " +
                        std::to_string(3 * t_short));
    }
    std::vector<Matrix> patches;
    for (Index i = 0; i < stream.chunk_count(); ++i) patches.push_back(chunk_patches(stream.chunk(i), model.chunk()));
    for (InferenceMode mode : cfg.bench_modes) {
      EngineOptions options = cfg.engine_options();
      options.mode = mode;
      const BenchResult r = benchmark(model, weights, options, patches, warmup);
      csv << mode_name(mode) << ',' << t_short << ',' << format_double(r.latency.mean_ns) << ','
          << format_double(r.latency.p95_ns) << ',' << format_double(r.latency.steps_per_second) << ','
          << r.pair_count << '\n';
    }
  }
  std::ofstream f = open_output(dir / "bench.csv");
  f << csv.str();
  out << csv.str();
  return kExitOk;
}

int cmd_eval_lengths(const GlobalOptions& g, const InferOptions& io, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  if (!io.preset.empty()) cfg.preset = parse_preset(io.preset);
  EngineOptions options = cfg.engine_options();
  options.mode = io.mode.empty() ? InferenceMode::kRegular : parse_mode(io.mode);
  RunConfig data_cfg = cfg;
  data_cfg.task.seed = cfg.seed + 1;
  data_cfg.task.stream_len_chunks = cfg.validation_chunks;
  const SyntheticStream stream = load_stream(g, data_cfg);
  const ModelWeights weights = weights_for(g, cfg.model, cfg.seed);
  const auto rows = evaluate_lengths(weights, cfg.model, stream, cfg.train.eval_t_long_list, options);
  std::ostringstream csv;
  csv << "t_long,accuracy,map\n";
  for (const auto& r : rows) csv << r.t_long << ',' << format_double(r.accuracy) << ',' << format_double(r.map) << '\n';
  std::ofstream f = open_output(fs::path(g.out_dir) / "eval_lengths.csv");
  f << csv.str();
  out << csv.str();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming long-short video transformer: training, inference and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "key = value configuration file");
  app.add_option("--seed", g.seed, "seed for weights, data and window sampling");
  app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
  app.add_option("--checkpoint", g.checkpoint, "model checkpoint (.e2ew)");
  app.add_option("--input", g.input, "input stream (.rsv); synthetic data is generated when absent");
  app.add_option("--labels", g.labels, "per-chunk labels CSV for --input");

  InferOptions io;
  auto* train = app.add_subcommand("train", "train on the synthetic task, writing a checkpoint per epoch");
  auto* infer = app.add_subcommand("infer", "stream a video through the engine and write predictions");
  infer->add_option("--mode", io.mode, "regular|efficient (overrides the preset)");
  infer->add_option("--preset", io.preset, "baseline|baseline+lc|baseline+ei|full");
  infer->add_flag("--dump-attention", io.dump_attention, "write per-step attention weights");
  auto* bench = app.add_subcommand("bench", "latency sweep over T_S for each inference mode");
  auto* eval = app.add_subcommand("eval-lengths", "evaluate one model at several long-window lengths");
  eval->add_option("--mode", io.mode, "regular|efficient (default regular)");
  eval->add_option("--preset", io.preset, "baseline|baseline+lc|baseline+ei|full");
  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");
  auto* gen = app.add_subcommand("gen-data", "write a synthetic stream (stream.rsv, labels.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(g, out);
    if (infer->parsed()) return cmd_infer(g, io, out);
    if (bench->parsed()) return cmd_bench(g, out);
    if (eval->parsed()) return cmd_eval_lengths(g, io, out);
    if (selftest->parsed()) return run_selftest(out) == 0 ? kExitOk : kExitFailure;
    if (gen->parsed()) return cmd_gen_data(g, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace e2eload
