#include "e2eload/model.hpp"

#include <cmath>
#include <numeric>

#include "e2eload/rng.hpp"

namespace e2eload {
namespace {

enum class Init { kUniformFanIn, kZeros, kOnes };

class Builder {
 public:
  Builder(std::uint64_t seed, std::vector<NamedTensor>& registry) : rng_(seed), registry_(registry) {}

  Tensor make(const std::string& name, Index rows, Index cols, Init init, Index fan_in = 0) {
    Matrix m(rows, cols);
    switch (init) {
      case Init::kZeros:
        m.setZero();
        break;
      case Init::kOnes:
        m.setOnes();
        break;
      case Init::kUniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : rows));
        for (Index i = 0; i < rows; ++i)
          for (Index j = 0; j < cols; ++j) m(i, j) = rng_.uniform(-bound, bound);
        break;
      }
    }
    Tensor t = Tensor::parameter(std::move(m));
    registry_.emplace_back(name, t);
    return t;
  }

  std::optional<DownsamplerWeights> downsampler(const std::string& name, const Strides& s, Index d) {
    if (s.is_identity()) return std::nullopt;
    DownsamplerWeights dw;
    dw.kernel = make(name + ".kernel", s.volume(), d, Init::kUniformFanIn, s.volume());
    dw.bias = make(name + ".bias", 1, d, Init::kZeros);
    return dw;
  }

  AttentionBlockWeights block(const std::string& p, const AttentionBlockConfig& cfg) {
    const Index d = cfg.d_model;
    AttentionBlockWeights w;
    w.norm1_gain = make(p + ".norm1.gain", 1, d, Init::kOnes);
    w.norm1_bias = make(p + ".norm1.bias", 1, d, Init::kZeros);
    w.w_q = make(p + ".w_q", d, d, Init::kUniformFanIn, d);
    w.w_k = make(p + ".w_k", d, d, Init::kUniformFanIn, d);
    w.w_v = make(p + ".w_v", d, d, Init::kUniformFanIn, d);
    w.q_down = downsampler(p + ".q_down", cfg.q_strides, d);
    w.k_down = downsampler(p + ".k_down", cfg.kv_strides, d);
    w.v_down = downsampler(p + ".v_down", cfg.kv_strides, d);
    w.norm2_gain = make(p + ".norm2.gain", 1, d, Init::kOnes);
    w.norm2_bias = make(p + ".norm2.bias", 1, d, Init::kZeros);
    w.mlp_w1 = make(p + ".mlp.w1", d, cfg.mlp_hidden, Init::kUniformFanIn, d);
    w.mlp_b1 = make(p + ".mlp.b1", 1, cfg.mlp_hidden, Init::kZeros);
    w.mlp_w2 = make(p + ".mlp.w2", cfg.mlp_hidden, d, Init::kUniformFanIn, cfg.mlp_hidden);
    w.mlp_b2 = make(p + ".mlp.b2", 1, d, Init::kZeros);
    return w;
  }

 private:
  Rng rng_;
  std::vector<NamedTensor>& registry_;
};

}  // namespace

Index StreamsConfig::temporal_reduction() const {
  return std::accumulate(lc_temporal_factors.begin(), lc_temporal_factors.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ChunkConfig ModelConfig::chunk() const {
  ChunkConfig c;
  c.tau = tau;
  c.t_sample = t_sample;
  c.frame_height = frame_height;
  c.frame_width = frame_width;
  c.patch_h = patch_h;
  c.patch_w = patch_w;
  c.d_model = d_model;
  c.phase_period = 2 * streams.t_short;
  return c;
}

AttentionBlockConfig ModelConfig::spatial_block() const {
  AttentionBlockConfig b;
  b.d_model = d_model;
  b.mlp_hidden = mlp_ratio * d_model;
  return b;
}

AttentionBlockConfig ModelConfig::short_term_block() const {
  AttentionBlockConfig b = spatial_block();
  b.causal = true;
  return b;
}

AttentionBlockConfig ModelConfig::long_term_block(Index layer) const {
  AttentionBlockConfig b = spatial_block();
  const Index spatial = layer == 0 ? streams.lc_spatial_factor : 1;
  b.q_strides = {streams.lc_temporal_factors.at(static_cast<std::size_t>(layer)), spatial, spatial};
  b.kv_strides = b.q_strides;
  return b;
}

AttentionBlockConfig ModelConfig::fusion_block() const { return spatial_block(); }

void ModelConfig::validate() const {
  chunk().validate();
  const auto& s = streams;
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (l_sb < 0 || s.l_sm < 1 || s.l_lc < 0) throw ConfigError("layer counts must be nonnegative (l_sm >= 1)");
  if (s.t_short < 1 || s.t_long < 0) throw ConfigError("t_short must be >= 1 and t_long >= 0");
  if (s.fusion_layer < 1 || s.fusion_layer > s.l_sm) {
    throw ConfigError("fusion_layer must lie in 1..l_sm");
  }
  if (static_cast<Index>(s.lc_temporal_factors.size()) != s.l_lc) {
    throw ConfigError("lc_temporal_factors must have l_lc entries");
  }
  for (Index f : s.lc_temporal_factors) {
    if (f < 1) throw ConfigError("lc_temporal_factors must be >= 1");
  }
  if (s.t_long > 0 && s.t_long % s.temporal_reduction() != 0) {
    throw ConfigError("product of lc_temporal_factors must divide t_long");
  }
  if (s.lc_spatial_factor < 1 || chunk().n_h() % s.lc_spatial_factor != 0 ||
      chunk().n_w() % s.lc_spatial_factor != 0) {
    throw ConfigError("lc_spatial_factor must divide the patch grid");
  }
  if (s.num_classes < 2) throw ConfigError("num_classes must be >= 2 (background plus one action)");
}

ModelWeights ModelWeights::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelWeights w;
  w.config_ = cfg;
  Builder b(seed, w.registry_);
  const ChunkConfig cc = cfg.chunk();
  const Index d = cfg.d_model;

  w.embedding.proj_w = b.make("embed.proj_w", cc.patch_dim(), d, Init::kUniformFanIn, cc.patch_dim());
  w.embedding.proj_b = b.make("embed.proj_b", 1, d, Init::kZeros);
  w.embedding.cls = b.make("embed.cls", 1, d, Init::kUniformFanIn, d);
  w.embedding.pos_spatial = b.make("embed.pos_spatial", cc.patches_per_chunk(), d, Init::kUniformFanIn, d);
  w.embedding.pos_temporal = b.make("embed.pos_temporal", cc.phase_period, d, Init::kUniformFanIn, d);

  for (Index i = 0; i < cfg.l_sb; ++i) {
    w.spatial.push_back(b.block("spatial." + std::to_string(i), cfg.spatial_block()));
  }
  for (Index i = 0; i < cfg.streams.l_sm; ++i) {
    w.short_term.push_back(b.block("short." + std::to_string(i), cfg.short_term_block()));
  }
  for (Index i = 0; i < cfg.streams.l_lc; ++i) {
    w.long_term.push_back(b.block("long." + std::to_string(i), cfg.long_term_block(i)));
  }
  if (cfg.streams.fusion_op == FusionOp::kCrossAttention) {
    w.fusion = b.block("fusion", cfg.fusion_block());
  }
  w.head_w = b.make("head.w", d, cfg.streams.num_classes, Init::kUniformFanIn, d);
  w.head_b = b.make("head.b", 1, cfg.streams.num_classes, Init::kZeros);
  return w;
}

ModelWeights ModelWeights::clone() const {
  ModelWeights copy = initialize(config_, 0);
  for (std::size_t i = 0; i < registry_.size(); ++i) {
    copy.registry_[i].second.mutable_leaf_value() = registry_[i].second.value();
  }
  return copy;
}

const Tensor* ModelWeights::find(const std::string& name) const {
  for (const auto& [n, t] : registry_) {
    if (n == name) return &t;
  }
  return nullptr;
}

void ModelWeights::zero_grad() const {
  for (const auto& entry : registry_) {
    Tensor t = entry.second;
    t.zero_grad();
  }
}

bool is_stream_buffer_parameter(const std::string& name) {
  return name.rfind("embed.", 0) == 0 || name.rfind("spatial.", 0) == 0;
}

}  // namespace e2eload
