#pragma once

#include <vector>

#include "e2eload/model.hpp"
#include "e2eload/rng.hpp"

namespace e2eload::testing {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline Tensor random_parameter(Rng& rng, Index rows, Index cols, double scale = 0.3) {
  return Tensor::parameter(random_matrix(rng, rows, cols, scale));
}

/// Block weights with random (not zero) biases and norms so every path is exercised.
inline AttentionBlockWeights random_block(Rng& rng, const AttentionBlockConfig& cfg) {
  const Index d = cfg.d_model;
  AttentionBlockWeights w;
  w.norm1_gain = Tensor::parameter(Matrix::Ones(1, d) + random_matrix(rng, 1, d, 0.1));
  w.norm1_bias = random_parameter(rng, 1, d, 0.1);
  w.w_q = random_parameter(rng, d, d);
  w.w_k = random_parameter(rng, d, d);
  w.w_v = random_parameter(rng, d, d);
  const auto down = [&](const Strides& s) {
    return DownsamplerWeights{random_parameter(rng, s.volume(), d, 0.5), random_parameter(rng, 1, d, 0.1)};
  };
  if (!cfg.q_strides.is_identity()) w.q_down = down(cfg.q_strides);
  if (!cfg.kv_strides.is_identity()) {
    w.k_down = down(cfg.kv_strides);
    w.v_down = down(cfg.kv_strides);
  }
  w.norm2_gain = Tensor::parameter(Matrix::Ones(1, d) + random_matrix(rng, 1, d, 0.1));
  w.norm2_bias = random_parameter(rng, 1, d, 0.1);
  w.mlp_w1 = random_parameter(rng, d, cfg.mlp_hidden);
  w.mlp_b1 = random_parameter(rng, 1, cfg.mlp_hidden, 0.1);
  w.mlp_w2 = random_parameter(rng, cfg.mlp_hidden, d);
  w.mlp_b2 = random_parameter(rng, 1, d, 0.1);
  return w;
}

inline AttentionBlockConfig block_config(Index d, Strides q = {}, Strides kv = {}) {
  AttentionBlockConfig c;
  c.d_model = d;
  c.q_strides = q;
  c.kv_strides = kv;
  c.mlp_hidden = 4 * d;
  return c;
}

/// Small model used where the toy geometry would make tests slow:
/// 16x16 frames, 8x8 patches (4 patch tokens + CLS), D = 16.
inline ModelConfig micro_config() {
  ModelConfig cfg = ModelConfig::toy();
  cfg.tau = 2;
  cfg.t_sample = 1;
  cfg.frame_height = 16;
  cfg.frame_width = 16;
  cfg.patch_h = 8;
  cfg.patch_w = 8;
  cfg.d_model = 16;
  cfg.l_sb = 1;
  cfg.streams.l_sm = 2;
  cfg.streams.l_lc = 2;
  cfg.streams.t_short = 2;
  cfg.streams.t_long = 4;
  cfg.streams.lc_temporal_factors = {2, 2};
  cfg.streams.lc_spatial_factor = 2;
  cfg.streams.fusion_layer = 1;
  return cfg;
}

inline std::vector<Matrix> random_patches(Rng& rng, Index chunks, const ModelConfig& cfg) {
  std::vector<Matrix> out;
  for (Index i = 0; i < chunks; ++i) {
    Matrix p(cfg.chunk().patches_per_chunk(), cfg.chunk().patch_dim());
    for (Index r = 0; r < p.rows(); ++r)
      for (Index c = 0; c < p.cols(); ++c) p(r, c) = rng.uniform();
    out.push_back(p);
  }
  return out;
}

/// Sets every value of a tensor to zero in place.
inline void zero_out(const Tensor& t) {
  Tensor h = t;
  h.mutable_leaf_value().setZero();
}

}  // namespace e2eload::testing
