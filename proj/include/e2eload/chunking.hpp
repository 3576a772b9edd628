#pragma once

#include <cstdint>
#include <vector>

#include "e2eload/tensor.hpp"

namespace e2eload {

/// A stack of RGB frames with pixels in [0, 1], stored frame-major, then
/// row-major, channels interleaved.
struct Frames {
  Index count = 0;
  Index height = 0;
  Index width = 0;
  std::vector<double> pixels;

  Frames() = default;
  Frames(Index count_, Index height_, Index width_, double fill = 0.0)
      : count(count_), height(height_), width(width_),
        pixels(static_cast<std::size_t>(count_ * height_ * width_ * 3), fill) {}

  static constexpr Index kChannels = 3;

  std::size_t offset(Index f, Index y, Index x, Index c) const {
    return static_cast<std::size_t>(((f * height + y) * width + x) * kChannels + c);
  }
  double& at(Index f, Index y, Index x, Index c) { return pixels[offset(f, y, x, c)]; }
  double at(Index f, Index y, Index x, Index c) const { return pixels[offset(f, y, x, c)]; }

  /// Frames [first, first + n).
  Frames slice(Index first, Index n) const;
};

struct ChunkConfig {
  Index tau = 4;        // frames per chunk
  Index t_sample = 2;   // frames kept per chunk
  Index frame_height = 32;
  Index frame_width = 32;
  Index patch_h = 8;
  Index patch_w = 8;
  Index d_model = 64;
  Index phase_period = 16;  // temporal embedding period, 2 * T_S

  Index n_h() const { return frame_height / patch_h; }
  Index n_w() const { return frame_width / patch_w; }
  Index patches_per_chunk() const { return n_h() * n_w(); }
  Index tokens_per_chunk() const { return patches_per_chunk() + 1; }
  Index patch_dim() const { return t_sample * patch_h * patch_w * Frames::kChannels; }
  void validate() const;
};

/// Token map of one chunk: patch tokens followed by the CLS token.
struct ChunkTokens {
  std::int64_t chunk_index = 0;
  Tensor tokens;
};

struct EmbeddingWeights {
  Tensor proj_w;        // patch_dim x D
  Tensor proj_b;        // 1 x D
  Tensor cls;           // 1 x D
  Tensor pos_spatial;   // patches_per_chunk x D
  Tensor pos_temporal;  // phase_period x D
};

/// Frame indices kept from a chunk: floor(k * tau / t) for k in [0, t).
std::vector<Index> sampled_frame_indices(const ChunkConfig& cfg);

Frames sample_frames(const Frames& chunk_frames, const ChunkConfig& cfg);

/// Flattened t x h x w x 3 patches of a chunk, one row per patch slot
/// (row-major over the n_h x n_w slot grid).
Matrix chunk_patches(const Frames& chunk_frames, const ChunkConfig& cfg);

ChunkTokens embed_patches(const Matrix& patches, std::int64_t chunk_index, const ChunkConfig& cfg,
                          const EmbeddingWeights& weights);

ChunkTokens embed_chunk(const Frames& chunk_frames, std::int64_t chunk_index, const ChunkConfig& cfg,
                        const EmbeddingWeights& weights);

}  // namespace e2eload
