#include "e2eload/attention.hpp"

#include <cmath>
#include <string>

namespace e2eload {
namespace {

GridExtents resolve_grid(const GridExtents& grid, Index rows, const Strides& strides,
                         const char* side) {
  if (strides.is_identity()) return {1, rows, 1};
  if (grid.count() != rows) {
    throw ShapeError(std::string("attention: ") + side + " grid has " +
                     std::to_string(grid.count()) + " cells but input has " +
                     std::to_string(rows) + " rows");
  }
  kernels::check_strides(grid, strides, "attention");
  return grid;
}

Tensor maybe_downsample(const Tensor& x, const GridExtents& grid, const Strides& strides,
                        const std::optional<DownsamplerWeights>& down) {
  if (strides.is_identity()) return x;
  if (!down) throw ContractError("attention: strided block is missing its down-sampling weights");
  return strided_downsample(x, grid, strides, DownsampleMode::kConv, &down->kernel, &down->bias);
}

}  // namespace

AdmissibilityMatrix ChunkMask::matrix() const {
  const auto rows = static_cast<Index>(query_chunks.size());
  const auto cols = static_cast<Index>(key_chunks.size());
  AdmissibilityMatrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = admissible(i, j) ? 1 : 0;
  return m;
}

ChunkMask build_chunk_mask(std::span<const std::int64_t> query_chunks,
                           std::span<const std::int64_t> key_chunks) {
  return ChunkMask{{query_chunks.begin(), query_chunks.end()}, {key_chunks.begin(), key_chunks.end()}};
}

std::vector<std::int64_t> expand_chunk_indices(std::span<const std::int64_t> chunks,
                                               Index tokens_per_chunk) {
  std::vector<std::int64_t> out;
  out.reserve(chunks.size() * static_cast<std::size_t>(tokens_per_chunk));
  for (std::int64_t c : chunks)
    for (Index k = 0; k < tokens_per_chunk; ++k) out.push_back(c);
  return out;
}

KeyValues project_key_values(const Tensor& x_kv, const AttentionBlockWeights& w,
                             const AttentionBlockConfig& cfg, const GridExtents& kv_grid) {
  if (x_kv.cols() != cfg.d_model) throw ShapeError("attention: key-side channel count differs from d_model");
  const GridExtents grid = resolve_grid(kv_grid, x_kv.rows(), cfg.kv_strides, "key");
  const Tensor normed = layer_norm(x_kv, w.norm1_gain, w.norm1_bias);
  return {maybe_downsample(matmul(normed, w.w_k), grid, cfg.kv_strides, w.k_down),
          maybe_downsample(matmul(normed, w.w_v), grid, cfg.kv_strides, w.v_down)};
}

Tensor attend_block(const Tensor& x_query, const KeyValues& kv, const AttentionBlockWeights& w,
                    const AttentionBlockConfig& cfg, const ChunkMask* mask, AttentionProbe* probe,
                    const GridExtents& query_grid) {
  if (x_query.cols() != cfg.d_model) throw ShapeError("attention: query channel count differs from d_model");
  if (mask && cfg.q_strides.t != 1) {
    throw ContractError("attention: temporal query down-sampling is not allowed under a causal mask");
  }
  const GridExtents grid = resolve_grid(query_grid, x_query.rows(), cfg.q_strides, "query");

  const Tensor normed = layer_norm(x_query, w.norm1_gain, w.norm1_bias);
  const Tensor q = maybe_downsample(matmul(normed, w.w_q), grid, cfg.q_strides, w.q_down);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const Tensor scores = scale(matmul_nt(q, kv.keys), inv_sqrt_d);

  AdmissibilityMatrix admissible;
  if (mask) {
    if (static_cast<Index>(mask->query_chunks.size()) != scores.rows() ||
        static_cast<Index>(mask->key_chunks.size()) != scores.cols()) {
      throw ShapeError("attention: mask covers " + std::to_string(mask->query_chunks.size()) + "x" +
                       std::to_string(mask->key_chunks.size()) + " but scores are " +
                       std::to_string(scores.rows()) + "x" + std::to_string(scores.cols()));
    }
    admissible = mask->matrix();
  }
  const AdmissibilityMatrix* m = mask ? &admissible : nullptr;
  const Tensor probs = masked_softmax_rows(scores, m);
  if (probe) {
    probe->score_entries += static_cast<std::uint64_t>(scores.rows() * scores.cols());
    if (probe->capture_from_row >= 0 && probe->capture_from_row < probs.rows()) {
      probe->captured = probs.value().bottomRows(probs.rows() - probe->capture_from_row);
    }
  }
  const Tensor mixed = attend(probs, kv.values, m);

  const Tensor residual =
      cfg.q_strides.is_identity()
          ? x_query
          : strided_downsample(x_query, grid, cfg.q_strides, DownsampleMode::kPool);
  const Tensor pooled = add(mixed, residual);

  const Tensor hidden =
      gelu(add_row(matmul(layer_norm(pooled, w.norm2_gain, w.norm2_bias), w.mlp_w1), w.mlp_b1));
  return add(pooled, add_row(matmul(hidden, w.mlp_w2), w.mlp_b2));
}

Tensor attention_block(const Tensor& x_query, const Tensor& x_kv, const AttentionBlockWeights& w,
                       const AttentionBlockConfig& cfg, const ChunkMask* mask, AttentionProbe* probe,
                       const GridExtents& query_grid, const GridExtents& kv_grid) {
  return attend_block(x_query, project_key_values(x_kv, w, cfg, kv_grid), w, cfg, mask, probe,
                      query_grid);
}

}  // namespace e2eload
