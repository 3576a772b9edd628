#pragma once

#include <cstdint>
#include <vector>

#include "e2eload/model.hpp"

// Reference implementations written as explicit scalar loops, sharing no
// kernel code with the library. Used by the self-test and the test suites.
namespace e2eload::oracle {

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps = 1e-5);
Matrix gelu(const Matrix& x);
Matrix matmul(const Matrix& a, const Matrix& b);
/// Block average (kernel == nullptr) or depthwise strided convolution.
Matrix downsample(const Matrix& x, const GridExtents& grid, const Strides& s, const Matrix* kernel,
                  const Matrix* bias);

/// One attention block evaluated pair by pair. Key j is visible to query i
/// when no chunk lists are given or key_chunks[j] <= query_chunks[i].
Matrix attention_block(const Matrix& xq, const Matrix& xkv, const AttentionBlockWeights& w,
                       const AttentionBlockConfig& cfg, const GridExtents& q_grid, const GridExtents& kv_grid,
                       const std::vector<std::int64_t>* query_chunks = nullptr,
                       const std::vector<std::int64_t>* key_chunks = nullptr);

/// Spatial stack over one chunk's tokens.
Matrix spatial_encode(const Matrix& tokens, const ModelWeights& weights, const ModelConfig& cfg);

/// Compression stack over the patch tokens of the given chunks (CLS rows
/// dropped, window truncated to the newest multiple of the factor product).
/// Returns an empty matrix when nothing is compressible.
Matrix long_term(const std::vector<Matrix>& chunk_tokens, const ModelWeights& weights, const ModelConfig& cfg);

/// Short-term stack with optional memory fusion; returns one logit row per chunk.
Matrix short_term_logits(const std::vector<Matrix>& chunk_tokens, const std::vector<std::int64_t>& chunk_indices,
                         const Matrix& memory, const ModelWeights& weights, const ModelConfig& cfg);

/// Sum over rows of -sum_j y_j log softmax(logits)_j.
double cross_entropy(const Matrix& logits, const Matrix& labels);

}  // namespace e2eload::oracle
