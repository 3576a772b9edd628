#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e2eload/metrics.hpp"
#include "e2eload/stream_buffer.hpp"
#include "e2eload/streams.hpp"

namespace e2eload {

enum class InferenceMode { kRegular, kEfficient };

/// Component ablation rows: baseline (SB+SM), +LC/LSF, +EI, and all three.
enum class Preset { kBaseline, kBaselineLc, kBaselineEi, kFull };

struct EngineOptions {
  InferenceMode mode = InferenceMode::kRegular;
  bool long_branch = true;
  Index lc_refresh_interval = 1;
  bool dump_attention = false;
};

EngineOptions preset_options(Preset preset);
Preset parse_preset(const std::string& name);
std::string preset_name(Preset preset);
InferenceMode parse_mode(const std::string& name);
std::string mode_name(InferenceMode mode);

/// Captured attention weights of the newest chunk's queries at one layer.
struct LayerAttention {
  std::string layer;  // "sm.<i>" or "fusion"
  Matrix weights;     // newest-chunk queries x keys
};

struct StepOutput {
  std::int64_t chunk_index = 0;
  Vector probabilities;
  std::int64_t latency_ns = 0;
  std::vector<LayerAttention> attention_dump;
};

/// Running instrumentation of an engine.
struct EngineCounters {
  std::uint64_t spatial_encodes = 0;
  std::uint64_t long_term_runs = 0;
  /// (chunk, SM layer) token computations; RI recomputes, EI computes each once.
  std::uint64_t short_term_chunk_layers = 0;
  /// Score entries per SM layer during the most recent step.
  std::vector<std::uint64_t> last_step_layer_pairs;
  std::uint64_t last_step_fusion_pairs = 0;
};

/// Per-SM-layer ring of the most recent T_S - 1 chunks computed by efficient inference.
struct LayerCache {
  struct Entry {
    std::int64_t chunk_index;
    Tensor output;
    Tensor keys;
    Tensor values;
  };
  std::deque<Entry> entries;
};

/// One streaming engine bound to one stream.
class Engine {
 public:
  Engine(ModelConfig cfg, std::shared_ptr<const ModelWeights> weights, EngineOptions options);

  /// Consumes the next chunk of tau frames and returns the newest chunk's prediction.
  StepOutput step(const Frames& chunk_frames);
  /// Same as step() with the chunk's patch matrix already extracted.
  StepOutput step_patches(const Matrix& patches);

  const ModelConfig& config() const { return cfg_; }
  const EngineOptions& options() const { return options_; }
  const EngineCounters& counters() const { return counters_; }
  const StreamBuffer& buffer() const { return buffer_; }
  const std::vector<LayerCache>& layer_caches() const { return caches_; }
  std::int64_t next_chunk_index() const { return next_index_; }
  /// Indices of SM layers whose key/value sequence excludes the memory.
  std::vector<Index> unfused_layers() const;

 private:
  Vector regular_forward(std::vector<LayerAttention>* dump);
  Vector efficient_forward(const ChunkTokens& newest, std::vector<LayerAttention>* dump);
  void refresh_memory();

  ModelConfig cfg_;
  std::shared_ptr<const ModelWeights> weights_;
  EngineOptions options_;
  StreamBuffer buffer_;
  CompressedMemory memory_;
  Index long_steps_ = 0;
  std::vector<LayerCache> caches_;
  EngineCounters counters_;
  std::int64_t next_index_ = 0;
};

/// Validates that `weights` were built for `cfg`, then constructs an engine.
/// Throws ConfigError on any parameter name or shape mismatch.
std::unique_ptr<Engine> make_engine(const ModelConfig& cfg, std::shared_ptr<const ModelWeights> weights,
                                    const EngineOptions& options);

struct BenchResult {
  LatencyStats latency;
  /// Score entries of the unfused SM layers in the final step.
  std::uint64_t pair_count = 0;
};

/// Streams the given chunk patch matrices through a fresh engine. The first
/// `warmup` steps are excluded from the latency statistics.
BenchResult benchmark(const ModelConfig& cfg, std::shared_ptr<const ModelWeights> weights,
                      const EngineOptions& options, std::span<const Matrix> chunk_patches, Index warmup);

/// Checks parameter names and shapes of `weights` against a fresh model for `cfg`.
void validate_weights(const ModelConfig& cfg, const ModelWeights& weights);

}  // namespace e2eload
