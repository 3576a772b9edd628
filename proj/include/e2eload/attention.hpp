#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "e2eload/tensor.hpp"

namespace e2eload {

/// Single-head pooling attention block with pre-norm and a GELU MLP.
struct AttentionBlockConfig {
  Index d_model = 64;
  Strides q_strides;
  Strides kv_strides;
  Index mlp_hidden = 256;
  bool causal = false;
};

struct DownsamplerWeights {
  Tensor kernel;  // stride volume x d_model
  Tensor bias;    // 1 x d_model
};

struct AttentionBlockWeights {
  Tensor norm1_gain, norm1_bias;
  Tensor w_q, w_k, w_v;
  // Present only for non-identity strides.
  std::optional<DownsamplerWeights> q_down, k_down, v_down;
  Tensor norm2_gain, norm2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

/// Chunk-granular causal admissibility: key j is visible to query i iff
/// key_chunks[j] <= query_chunks[i].
struct ChunkMask {
  std::vector<std::int64_t> query_chunks;
  std::vector<std::int64_t> key_chunks;

  bool admissible(Index query, Index key) const {
    return key_chunks[static_cast<std::size_t>(key)] <= query_chunks[static_cast<std::size_t>(query)];
  }
  AdmissibilityMatrix matrix() const;
};

ChunkMask build_chunk_mask(std::span<const std::int64_t> query_chunks,
                           std::span<const std::int64_t> key_chunks);

/// Repeats each chunk index `tokens_per_chunk` times.
std::vector<std::int64_t> expand_chunk_indices(std::span<const std::int64_t> chunks,
                                               Index tokens_per_chunk);

/// Instrumentation hook: counts computed score entries and optionally captures
/// the attention weights of query rows from `capture_from_row` on.
struct AttentionProbe {
  std::uint64_t score_entries = 0;
  Index capture_from_row = -1;
  Matrix captured;
};

/// Down-sampled key/value projections of a normalized key-side sequence.
struct KeyValues {
  Tensor keys;
  Tensor values;
};

/// K^ and V^ for x_kv (pre-norm, projection, then strided down-sampling).
KeyValues project_key_values(const Tensor& x_kv, const AttentionBlockWeights& weights,
                             const AttentionBlockConfig& cfg, const GridExtents& kv_grid = {});

/// The query-side half of the block: attends x_query against precomputed
/// key/values, adds the pooled residual, then the MLP residual.
Tensor attend_block(const Tensor& x_query, const KeyValues& kv, const AttentionBlockWeights& weights,
                    const AttentionBlockConfig& cfg, const ChunkMask* mask,
                    AttentionProbe* probe = nullptr, const GridExtents& query_grid = {});

/// Full block. Grids are only consulted when the corresponding strides are
/// not identity; the output grid is query_grid divided by q_strides.
Tensor attention_block(const Tensor& x_query, const Tensor& x_kv,
                       const AttentionBlockWeights& weights, const AttentionBlockConfig& cfg,
                       const ChunkMask* mask, AttentionProbe* probe = nullptr,
                       const GridExtents& query_grid = {}, const GridExtents& kv_grid = {});

}  // namespace e2eload
