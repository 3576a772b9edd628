#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "e2eload/attention.hpp"
#include "e2eload/chunking.hpp"

namespace e2eload {

enum class FusionOp { kCrossAttention, kSelfAttention };

struct StreamsConfig {
  Index l_sm = 4;
  Index l_lc = 4;
  Index t_short = 8;
  Index t_long = 16;
  FusionOp fusion_op = FusionOp::kCrossAttention;
  Index fusion_layer = 3;  // 1-based SM layer that receives the memory
  std::vector<Index> lc_temporal_factors{2, 2, 1, 1};
  Index lc_spatial_factor = 2;
  Index num_classes = 3;

  Index temporal_reduction() const;
};

/// Every architecture hyperparameter of the model.
struct ModelConfig {
  Index tau = 4;
  Index t_sample = 2;
  Index frame_height = 32;
  Index frame_width = 32;
  Index patch_h = 8;
  Index patch_w = 8;
  Index d_model = 64;
  Index mlp_ratio = 4;
  Index l_sb = 2;
  StreamsConfig streams;

  /// tau=4, t=2, 32x32 frames, 8x8 patches, D=64, L_SB=2, L_SM=4, L_LC=4,
  /// T_S=8, T_L=16, factors [2,2,1,1], spatial factor 2, CA fusion at layer 3.
  static ModelConfig toy();

  ChunkConfig chunk() const;
  Index tokens_per_chunk() const { return chunk().tokens_per_chunk(); }

  AttentionBlockConfig spatial_block() const;
  AttentionBlockConfig short_term_block() const;
  AttentionBlockConfig long_term_block(Index layer) const;
  AttentionBlockConfig fusion_block() const;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// All trainable tensors of the model. Copies share storage; use clone() for
/// an independent set.
class ModelWeights {
 public:
  static ModelWeights initialize(const ModelConfig& cfg, std::uint64_t seed);

  ModelWeights clone() const;

  const ModelConfig& config() const { return config_; }
  /// Parameters in registration order (the order initialization draws from the Rng).
  const std::vector<NamedTensor>& parameters() const { return registry_; }
  const Tensor* find(const std::string& name) const;

  void zero_grad() const;

  EmbeddingWeights embedding;
  std::vector<AttentionBlockWeights> spatial;
  std::vector<AttentionBlockWeights> short_term;
  std::vector<AttentionBlockWeights> long_term;
  std::optional<AttentionBlockWeights> fusion;
  Tensor head_w;  // D x C
  Tensor head_b;  // 1 x C

 private:
  ModelConfig config_;
  std::vector<NamedTensor> registry_;
};

/// True for parameters of the chunk embedding and the spatial (stream buffer) encoder.
bool is_stream_buffer_parameter(const std::string& name);

}  // namespace e2eload
