#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "e2eload/model.hpp"

namespace e2eload {

/// Down-sampled summary of the long-term window.
struct CompressedMemory {
  Tensor tokens;  // grid.count() x D; undefined when empty
  GridExtents grid{0, 0, 0};
  std::int64_t first_chunk = -1;  // absolute chunk span summarized
  std::int64_t last_chunk = -1;

  bool empty() const { return !tokens.defined() || tokens.rows() == 0; }
  Index size() const { return empty() ? 0 : tokens.rows(); }
};

/// Chunk index assigned to memory tokens under the causal mask: older than any chunk.
inline constexpr std::int64_t kMemoryChunk = -1;

/// Number of newest chunks of a length-n long window that the factor schedule can consume.
Index compressible_length(Index n, const StreamsConfig& cfg);

/// Detaches the long window (patch tokens only), then applies the strided
/// compression stack. A window shorter than the factor product yields an
/// empty memory, which callers treat as "skip fusion".
CompressedMemory long_term_compress(std::span<const ChunkTokens> window, const ModelWeights& weights,
                                    const ModelConfig& cfg);

/// Attention instrumentation for one short-term forward pass.
struct ShortTermProbe {
  /// Row of the concatenated window from which attention weights are captured; -1 disables.
  Index capture_from_row = -1;
  std::vector<AttentionProbe> layers;
  AttentionProbe fusion;
};

struct ShortTermResult {
  Tensor tokens;  // final window tokens
  Tensor logits;  // one row of C logits per chunk
};

/// Causal spatiotemporal stack over the short window with memory fused at
/// the configured layer.
ShortTermResult short_term_forward(std::span<const ChunkTokens> window, const CompressedMemory* memory,
                                   const ModelWeights& weights, const ModelConfig& cfg,
                                   ShortTermProbe* probe = nullptr);

/// Cross-attention fusion: queries are sm_tokens, keys/values the memory, no mask.
/// Identity for an empty memory.
Tensor cross_attention_fuse(const Tensor& sm_tokens, const CompressedMemory& memory,
                            const ModelWeights& weights, const ModelConfig& cfg,
                            AttentionProbe* probe = nullptr);

/// Self-attention fusion: runs `block` over layer_input with its key/value
/// sequence prefixed by the memory tokens, which every query may attend.
Tensor self_attention_fuse(const Tensor& layer_input, std::span<const std::int64_t> token_chunks,
                           const CompressedMemory& memory, const AttentionBlockWeights& block,
                           const ModelConfig& cfg, AttentionProbe* probe = nullptr);

/// Applies the configured fusion operator at the fusion layer. For
/// cross-attention `tokens` is that layer's output; for self-attention it is
/// that layer's input and the result replaces the layer's plain output.
Tensor fuse(const Tensor& tokens, std::span<const std::int64_t> token_chunks,
            const CompressedMemory& memory, const ModelWeights& weights, const ModelConfig& cfg,
            AttentionProbe* probe = nullptr);

/// Affine head over the CLS token of each chunk in a chunk-major token sequence.
Tensor chunk_logits(const Tensor& tokens, Index chunk_count, const ModelWeights& weights,
                    const ModelConfig& cfg);

/// Softmax over class logits.
Vector classify(const Vector& logits);

}  // namespace e2eload
