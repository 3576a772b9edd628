#include "e2eload/streams.hpp"

#include <array>
#include <string>

namespace e2eload {
namespace {

std::vector<std::int64_t> window_token_chunks(std::span<const ChunkTokens> window, Index per_chunk) {
  std::vector<std::int64_t> chunks;
  for (const auto& c : window) chunks.push_back(c.chunk_index);
  return expand_chunk_indices(chunks, per_chunk);
}

}  // namespace

Index compressible_length(Index n, const StreamsConfig& cfg) {
  const Index r = cfg.temporal_reduction();
  return (n / r) * r;
}

CompressedMemory long_term_compress(std::span<const ChunkTokens> window, const ModelWeights& weights,
                                    const ModelConfig& cfg) {
  CompressedMemory memory;
  const Index usable = compressible_length(static_cast<Index>(window.size()), cfg.streams);
  if (usable == 0) return memory;
  const auto kept = window.subspan(window.size() - static_cast<std::size_t>(usable));

  const ChunkConfig cc = cfg.chunk();
  std::vector<Tensor> patches;
  for (const auto& c : kept) {
    if (c.tokens.rows() != cc.tokens_per_chunk()) throw ShapeError("long_term_compress: malformed chunk tokens");
    patches.push_back(slice_rows(c.tokens, 0, cc.patches_per_chunk()));
  }
  Tensor x = stop_gradient(concat_rows(patches));
  GridExtents grid{usable, cc.n_h(), cc.n_w()};
  for (Index layer = 0; layer < cfg.streams.l_lc; ++layer) {
    const AttentionBlockConfig bc = cfg.long_term_block(layer);
    x = attention_block(x, x, weights.long_term[static_cast<std::size_t>(layer)], bc, nullptr,
                        nullptr, grid, grid);
    grid = kernels::downsampled(grid, bc.q_strides);
  }
  memory.tokens = x;
  memory.grid = grid;
  memory.first_chunk = kept.front().chunk_index;
  memory.last_chunk = kept.back().chunk_index;
  return memory;
}

Tensor cross_attention_fuse(const Tensor& sm_tokens, const CompressedMemory& memory,
                            const ModelWeights& weights, const ModelConfig& cfg, AttentionProbe* probe) {
  if (memory.empty()) return sm_tokens;
  if (!weights.fusion) throw ContractError("cross_attention_fuse: model has no fusion block");
  return attention_block(sm_tokens, memory.tokens, *weights.fusion, cfg.fusion_block(), nullptr, probe);
}

Tensor self_attention_fuse(const Tensor& layer_input, std::span<const std::int64_t> token_chunks,
                           const CompressedMemory& memory, const AttentionBlockWeights& block,
                           const ModelConfig& cfg, AttentionProbe* probe) {
  const AttentionBlockConfig bc = cfg.short_term_block();
  if (memory.empty()) {
    const ChunkMask mask = build_chunk_mask(token_chunks, token_chunks);
    return attention_block(layer_input, layer_input, block, bc, &mask, probe);
  }
  std::vector<std::int64_t> key_chunks(static_cast<std::size_t>(memory.size()), kMemoryChunk);
  key_chunks.insert(key_chunks.end(), token_chunks.begin(), token_chunks.end());
  const ChunkMask mask = build_chunk_mask(token_chunks, key_chunks);
  const std::array<Tensor, 2> kv{memory.tokens, layer_input};
  return attention_block(layer_input, concat_rows(kv), block, bc, &mask, probe);
}

Tensor fuse(const Tensor& tokens, std::span<const std::int64_t> token_chunks,
            const CompressedMemory& memory, const ModelWeights& weights, const ModelConfig& cfg,
            AttentionProbe* probe) {
  if (cfg.streams.fusion_op == FusionOp::kCrossAttention) {
    return cross_attention_fuse(tokens, memory, weights, cfg, probe);
  }
  const auto& block = weights.short_term[static_cast<std::size_t>(cfg.streams.fusion_layer - 1)];
  return self_attention_fuse(tokens, token_chunks, memory, block, cfg, probe);
}

ShortTermResult short_term_forward(std::span<const ChunkTokens> window, const CompressedMemory* memory,
                                   const ModelWeights& weights, const ModelConfig& cfg,
                                   ShortTermProbe* probe) {
  if (window.empty()) throw ContractError("short_term_forward: empty window");
  const Index per_chunk = cfg.tokens_per_chunk();
  std::vector<Tensor> parts;
  for (const auto& c : window) parts.push_back(c.tokens);
  Tensor x = concat_rows(parts);
  const auto token_chunks = window_token_chunks(window, per_chunk);
  const ChunkMask mask = build_chunk_mask(token_chunks, token_chunks);
  const AttentionBlockConfig bc = cfg.short_term_block();
  const bool has_memory = memory && !memory->empty();

  if (probe) {
    probe->layers.assign(static_cast<std::size_t>(cfg.streams.l_sm), AttentionProbe{});
    probe->fusion = AttentionProbe{};
    for (auto& p : probe->layers) p.capture_from_row = probe->capture_from_row;
    probe->fusion.capture_from_row = probe->capture_from_row;
  }
  for (Index layer = 0; layer < cfg.streams.l_sm; ++layer) {
    AttentionProbe* lp = probe ? &probe->layers[static_cast<std::size_t>(layer)] : nullptr;
    const auto& block = weights.short_term[static_cast<std::size_t>(layer)];
    const bool fusion_here = has_memory && layer + 1 == cfg.streams.fusion_layer;
    if (fusion_here && cfg.streams.fusion_op == FusionOp::kSelfAttention) {
      x = self_attention_fuse(x, token_chunks, *memory, block, cfg, lp);
      continue;
    }
    x = attention_block(x, x, block, bc, &mask, lp);
    if (fusion_here) x = cross_attention_fuse(x, *memory, weights, cfg, probe ? &probe->fusion : nullptr);
  }
  return {x, chunk_logits(x, static_cast<Index>(window.size()), weights, cfg)};
}

Tensor chunk_logits(const Tensor& tokens, Index chunk_count, const ModelWeights& weights,
                    const ModelConfig& cfg) {
  const Index per_chunk = cfg.tokens_per_chunk();
  if (tokens.rows() != chunk_count * per_chunk) throw ShapeError("chunk_logits: token count mismatch");
  std::vector<Index> cls_rows;
  for (Index c = 0; c < chunk_count; ++c) cls_rows.push_back(c * per_chunk + per_chunk - 1);
  return add_row(matmul(gather_rows(tokens, cls_rows), weights.head_w), weights.head_b);
}

Vector classify(const Vector& logits) { return kernels::softmax_rows(logits); }

}  // namespace e2eload
