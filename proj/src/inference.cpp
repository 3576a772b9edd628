#include "e2eload/inference.hpp"

#include <array>
#include <chrono>

namespace e2eload {

EngineOptions preset_options(Preset preset) {
  EngineOptions o;
  switch (preset) {
    case Preset::kBaseline:
      o.mode = InferenceMode::kRegular;
      o.long_branch = false;
      break;
    case Preset::kBaselineLc:
      o.mode = InferenceMode::kRegular;
      o.long_branch = true;
      break;
    case Preset::kBaselineEi:
      o.mode = InferenceMode::kEfficient;
      o.long_branch = false;
      break;
    case Preset::kFull:
      o.mode = InferenceMode::kEfficient;
      o.long_branch = true;
      break;
  }
  return o;
}

Preset parse_preset(const std::string& name) {
  if (name == "baseline") return Preset::kBaseline;
  if (name == "baseline+lc") return Preset::kBaselineLc;
  if (name == "baseline+ei") return Preset::kBaselineEi;
  if (name == "full") return Preset::kFull;
  throw ConfigError("unknown preset '" + name + "' (expected baseline, baseline+lc, baseline+ei, full)");
}

std::string preset_name(Preset preset) {
  switch (preset) {
    case Preset::kBaseline: return "baseline";
    case Preset::kBaselineLc: return "baseline+lc";
    case Preset::kBaselineEi: return "baseline+ei";
    case Preset::kFull: return "full";
  }
  return "?";
}

InferenceMode parse_mode(const std::string& name) {
  if (name == "regular") return InferenceMode::kRegular;
  if (name == "efficient") return InferenceMode::kEfficient;
  throw ConfigError("unknown mode '" + name + "' (expected regular or efficient)");
}

std::string mode_name(InferenceMode mode) {
  return mode == InferenceMode::kRegular ? "regular" : "efficient";
}

void validate_weights(const ModelConfig& cfg, const ModelWeights& weights) {
  const ModelWeights expected = ModelWeights::initialize(cfg, 0);
  const auto& want = expected.parameters();
  const auto& have = weights.parameters();
  if (want.size() != have.size()) {
    throw ConfigError("weights have " + std::to_string(have.size()) + " tensors, config expects " +
                      std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].first != have[i].first) {
      throw ConfigError("weight " + std::to_string(i) + " is '" + have[i].first + "', expected '" +
                        want[i].first + "'");
    }
    if (want[i].second.rows() != have[i].second.rows() || want[i].second.cols() != have[i].second.cols()) {
      throw ConfigError("weight '" + have[i].first + "' has shape " + std::to_string(have[i].second.rows()) +
                        "x" + std::to_string(have[i].second.cols()) + ", expected " +
                        std::to_string(want[i].second.rows()) + "x" + std::to_string(want[i].second.cols()));
    }
  }
}

std::unique_ptr<Engine> make_engine(const ModelConfig& cfg, std::shared_ptr<const ModelWeights> weights,
                                    const EngineOptions& options) {
  if (!weights) throw ConfigError("make_engine: no weights");
  validate_weights(cfg, *weights);
  return std::make_unique<Engine>(cfg, std::move(weights), options);
}

Engine::Engine(ModelConfig cfg, std::shared_ptr<const ModelWeights> weights, EngineOptions options)
    : cfg_(std::move(cfg)),
      weights_(std::move(weights)),
      options_(options),
      buffer_(cfg_.streams.t_short + cfg_.streams.t_long) {
  cfg_.validate();
  if (options_.lc_refresh_interval < 1) throw ConfigError("lc_refresh_interval must be positive");
  if (options_.long_branch && cfg_.streams.t_long == 0) options_.long_branch = false;
  caches_.resize(static_cast<std::size_t>(cfg_.streams.l_sm));
}

std::vector<Index> Engine::unfused_layers() const {
  std::vector<Index> out;
  for (Index l = 0; l < cfg_.streams.l_sm; ++l) {
    const bool fused = options_.long_branch && cfg_.streams.fusion_op == FusionOp::kSelfAttention &&
                       l + 1 == cfg_.streams.fusion_layer;
    if (!fused) out.push_back(l);
  }
  return out;
}

StepOutput Engine::step(const Frames& chunk_frames) {
  return step_patches(chunk_patches(chunk_frames, cfg_.chunk()));
}

StepOutput Engine::step_patches(const Matrix& patches) {
  NoGradGuard no_grad;
  const auto start = std::chrono::steady_clock::now();

  const ChunkTokens embedded = embed_patches(patches, next_index_, cfg_.chunk(), weights_->embedding);
  ChunkTokens encoded = spatial_encode(embedded, weights_->spatial, cfg_.spatial_block());
  ++counters_.spatial_encodes;
  buffer_.push(encoded);
  ++next_index_;

  if (options_.long_branch) refresh_memory();

  StepOutput out;
  out.chunk_index = encoded.chunk_index;
  std::vector<LayerAttention>* dump = options_.dump_attention ? &out.attention_dump : nullptr;
  out.probabilities = options_.mode == InferenceMode::kRegular ? regular_forward(dump)
                                                               : efficient_forward(encoded, dump);
  out.latency_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return out;
}

void Engine::refresh_memory() {
  const auto window = buffer_.window_long(cfg_.streams.t_short, cfg_.streams.t_long);
  if (window.empty()) {
    memory_ = {};
    return;
  }
  if (long_steps_ % options_.lc_refresh_interval == 0 || memory_.empty()) {
    memory_ = long_term_compress(window, *weights_, cfg_);
    ++counters_.long_term_runs;
  }
  ++long_steps_;
}

Vector Engine::regular_forward(std::vector<LayerAttention>* dump) {
  const auto window = buffer_.window_short(cfg_.streams.t_short);
  const Index per_chunk = cfg_.tokens_per_chunk();
  const auto n = static_cast<Index>(window.size());

  ShortTermProbe probe;
  probe.capture_from_row = dump ? (n - 1) * per_chunk : -1;
  const CompressedMemory* memory = options_.long_branch ? &memory_ : nullptr;
  const ShortTermResult result = short_term_forward(window, memory, *weights_, cfg_, &probe);

  counters_.short_term_chunk_layers += static_cast<std::uint64_t>(n * cfg_.streams.l_sm);
  counters_.last_step_layer_pairs.clear();
  for (const auto& p : probe.layers) counters_.last_step_layer_pairs.push_back(p.score_entries);
  counters_.last_step_fusion_pairs = probe.fusion.score_entries;
  if (dump) {
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
      dump->push_back({"sm." + std::to_string(l), probe.layers[l].captured});
      if (static_cast<Index>(l) + 1 == cfg_.streams.fusion_layer && probe.fusion.score_entries > 0) {
        dump->push_back({"fusion", probe.fusion.captured});
      }
    }
  }
  return classify(result.logits.value().bottomRows(1));
}

Vector Engine::efficient_forward(const ChunkTokens& newest, std::vector<LayerAttention>* dump) {
  const AttentionBlockConfig bc = cfg_.short_term_block();
  const bool has_memory = options_.long_branch && !memory_.empty();
  const Index max_cached = cfg_.streams.t_short - 1;

  counters_.last_step_layer_pairs.clear();
  counters_.last_step_fusion_pairs = 0;
  Tensor x = newest.tokens;
  for (Index layer = 0; layer < cfg_.streams.l_sm; ++layer) {
    const auto& block = weights_->short_term[static_cast<std::size_t>(layer)];
    LayerCache& cache = caches_[static_cast<std::size_t>(layer)];
    const bool fusion_here = has_memory && layer + 1 == cfg_.streams.fusion_layer;

    const KeyValues own = project_key_values(x, block, bc);
    std::vector<Tensor> keys, values;
    if (fusion_here && cfg_.streams.fusion_op == FusionOp::kSelfAttention) {
      const KeyValues mem = project_key_values(memory_.tokens, block, bc);
      keys.push_back(mem.keys);
      values.push_back(mem.values);
    }
    for (const auto& e : cache.entries) {
      keys.push_back(e.keys);
      values.push_back(e.values);
    }
    keys.push_back(own.keys);
    values.push_back(own.values);

    AttentionProbe probe;
    probe.capture_from_row = dump ? 0 : -1;
    Tensor y = attend_block(x, {concat_rows(keys), concat_rows(values)}, block, bc, nullptr, &probe);
    counters_.last_step_layer_pairs.push_back(probe.score_entries);
    if (dump) dump->push_back({"sm." + std::to_string(layer), probe.captured});

    if (fusion_here && cfg_.streams.fusion_op == FusionOp::kCrossAttention) {
      AttentionProbe fprobe;
      fprobe.capture_from_row = dump ? 0 : -1;
      y = cross_attention_fuse(y, memory_, *weights_, cfg_, &fprobe);
      counters_.last_step_fusion_pairs = fprobe.score_entries;
      if (dump) dump->push_back({"fusion", fprobe.captured});
    }
    ++counters_.short_term_chunk_layers;

    cache.entries.push_back({newest.chunk_index, y, own.keys, own.values});
    while (static_cast<Index>(cache.entries.size()) > max_cached) cache.entries.pop_front();
    x = y;
  }
  const Tensor logits = chunk_logits(x, 1, *weights_, cfg_);
  return classify(logits.value());
}

BenchResult benchmark(const ModelConfig& cfg, std::shared_ptr<const ModelWeights> weights,
                      const EngineOptions& options, std::span<const Matrix> chunk_patches, Index warmup) {
  if (warmup < 0 || warmup >= static_cast<Index>(chunk_patches.size())) {
    throw ConfigError("benchmark: stream of " + std::to_string(chunk_patches.size()) +
                      " chunks leaves no steps after " + std::to_string(warmup) + " warm-up steps");
  }
  Engine engine(cfg, std::move(weights), options);
  std::vector<std::int64_t> latencies;
  for (std::size_t i = 0; i < chunk_patches.size(); ++i) {
    const StepOutput out = engine.step_patches(chunk_patches[i]);
    if (static_cast<Index>(i) >= warmup) latencies.push_back(out.latency_ns);
  }
  BenchResult r;
  r.latency = latency_stats(latencies);
  for (Index l : engine.unfused_layers()) {
    r.pair_count += engine.counters().last_step_layer_pairs[static_cast<std::size_t>(l)];
  }
  return r;
}

}  // namespace e2eload
