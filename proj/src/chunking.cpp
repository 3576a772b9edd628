#include "e2eload/chunking.hpp"

#include <algorithm>
#include <array>
#include <string>

namespace e2eload {

Frames Frames::slice(Index first, Index n) const {
  if (first < 0 || n < 0 || first + n > count) throw ShapeError("Frames::slice: range out of bounds");
  Frames out(n, height, width);
  const auto begin = pixels.begin() + static_cast<std::ptrdiff_t>(offset(first, 0, 0, 0));
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(out.pixels.size()), out.pixels.begin());
  return out;
}

void ChunkConfig::validate() const {
  if (tau < 1 || t_sample < 1 || t_sample > tau) {
    throw ConfigError("chunk: need 1 <= t_sample <= tau");
  }
  if (patch_h < 1 || patch_w < 1 || frame_height % patch_h != 0 || frame_width % patch_w != 0) {
    throw ConfigError("chunk: patch size must divide frame size");
  }
  if (d_model < 1 || phase_period < 1) throw ConfigError("chunk: d_model and phase period must be positive");
}

std::vector<Index> sampled_frame_indices(const ChunkConfig& cfg) {
  std::vector<Index> idx;
  for (Index k = 0; k < cfg.t_sample; ++k) idx.push_back(k * cfg.tau / cfg.t_sample);
  return idx;
}

Frames sample_frames(const Frames& chunk_frames, const ChunkConfig& cfg) {
  if (chunk_frames.count != cfg.tau) {
    throw ShapeError("sample_frames: expected " + std::to_string(cfg.tau) + " frames, got " +
                     std::to_string(chunk_frames.count));
  }
  Frames out(cfg.t_sample, chunk_frames.height, chunk_frames.width);
  const auto idx = sampled_frame_indices(cfg);
  const std::size_t frame_size = static_cast<std::size_t>(chunk_frames.height * chunk_frames.width * 3);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto src = chunk_frames.pixels.begin() +
                     static_cast<std::ptrdiff_t>(chunk_frames.offset(idx[k], 0, 0, 0));
    std::copy(src, src + static_cast<std::ptrdiff_t>(frame_size),
              out.pixels.begin() + static_cast<std::ptrdiff_t>(k * frame_size));
  }
  return out;
}

Matrix chunk_patches(const Frames& chunk_frames, const ChunkConfig& cfg) {
  if (chunk_frames.height != cfg.frame_height || chunk_frames.width != cfg.frame_width) {
    throw ShapeError("chunk_patches: frame size " + std::to_string(chunk_frames.height) + "x" +
                     std::to_string(chunk_frames.width) + " does not match config " +
                     std::to_string(cfg.frame_height) + "x" + std::to_string(cfg.frame_width));
  }
  const Frames sampled = sample_frames(chunk_frames, cfg);
  Matrix patches(cfg.patches_per_chunk(), cfg.patch_dim());
  for (Index py = 0; py < cfg.n_h(); ++py) {
    for (Index px = 0; px < cfg.n_w(); ++px) {
      const Index row = py * cfg.n_w() + px;
      Index col = 0;
      for (Index f = 0; f < cfg.t_sample; ++f)
        for (Index dy = 0; dy < cfg.patch_h; ++dy)
          for (Index dx = 0; dx < cfg.patch_w; ++dx)
            for (Index c = 0; c < Frames::kChannels; ++c)
              patches(row, col++) = sampled.at(f, py * cfg.patch_h + dy, px * cfg.patch_w + dx, c);
    }
  }
  return patches;
}

ChunkTokens embed_patches(const Matrix& patches, std::int64_t chunk_index, const ChunkConfig& cfg,
                          const EmbeddingWeights& w) {
  if (chunk_index < 0) throw ContractError("embed: chunk index must be nonnegative");
  if (patches.rows() != cfg.patches_per_chunk() || patches.cols() != cfg.patch_dim()) {
    throw ShapeError("embed: patch matrix is " + std::to_string(patches.rows()) + "x" +
                     std::to_string(patches.cols()) + ", expected " +
                     std::to_string(cfg.patches_per_chunk()) + "x" + std::to_string(cfg.patch_dim()));
  }
  const Tensor projected =
      add(add_row(matmul(Tensor::constant(patches), w.proj_w), w.proj_b), w.pos_spatial);
  const std::array<Tensor, 2> parts{projected, w.cls};
  const Index phase = static_cast<Index>(chunk_index % cfg.phase_period);
  const Tensor tokens = add_row(concat_rows(parts), slice_rows(w.pos_temporal, phase, 1));
  return {chunk_index, tokens};
}

ChunkTokens embed_chunk(const Frames& chunk_frames, std::int64_t chunk_index, const ChunkConfig& cfg,
                        const EmbeddingWeights& w) {
  return embed_patches(chunk_patches(chunk_frames, cfg), chunk_index, cfg, w);
}

}  // namespace e2eload
