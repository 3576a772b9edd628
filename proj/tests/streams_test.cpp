#include <gtest/gtest.h>

#include <cmath>

#include "e2eload/oracle.hpp"
#include "e2eload/stream_buffer.hpp"
#include "e2eload/streams.hpp"
#include "test_util.hpp"

namespace e2eload {
namespace {

using testing::random_matrix;

std::vector<ChunkTokens> random_window(Rng& rng, Index n, std::int64_t first, const ModelConfig& cfg) {
  std::vector<ChunkTokens> out;
  for (Index i = 0; i < n; ++i) {
    out.push_back({first + i, Tensor::constant(random_matrix(rng, cfg.tokens_per_chunk(), cfg.d_model))});
  }
  return out;
}

std::vector<Matrix> values(const std::vector<ChunkTokens>& w) {
  std::vector<Matrix> out;
  for (const auto& c : w) out.push_back(c.tokens.value());
  return out;
}

std::vector<std::int64_t> chunk_ids(const std::vector<ChunkTokens>& w) {
  std::vector<std::int64_t> out;
  for (const auto& c : w) out.push_back(c.chunk_index);
  return out;
}

/// Chunks embedded and spatially encoded with gradient tracking, so buffer
/// parameters sit upstream of every token.
std::vector<ChunkTokens> encoded_window(Rng& rng, Index n, std::int64_t first, const ModelWeights& w,
                                        const ModelConfig& cfg) {
  std::vector<ChunkTokens> out;
  for (const auto& p : testing::random_patches(rng, n, cfg)) {
    const ChunkTokens e = embed_patches(p, first++, cfg.chunk(), w.embedding);
    out.push_back(spatial_encode(e, w.spatial, cfg.spatial_block()));
  }
  return out;
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

TEST(LongTermCompress, ToyShapeLaw) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 1);
  Rng rng(1);
  const auto window = random_window(rng, 16, 0, cfg);
  const CompressedMemory m = long_term_compress(window, w, cfg);
  EXPECT_EQ(m.size(), 16);
  EXPECT_EQ(m.grid, (GridExtents{4, 2, 2}));
  EXPECT_EQ(m.first_chunk, 0);
  EXPECT_EQ(m.last_chunk, 15);
}

TEST(LongTermCompress, ShapeLawOverFactorSchedules) {
  Rng rng(2);
  const std::vector<std::pair<std::vector<Index>, Index>> schedules = {
      {{2, 2, 1, 1}, 2}, {{1, 1, 1, 1}, 1}, {{4, 1, 1, 1}, 2}, {{2, 1, 2, 1}, 4}, {{1, 2, 2, 2}, 1}};
  for (const auto& [factors, spatial] : schedules) {
    ModelConfig cfg = ModelConfig::toy();
    cfg.d_model = 8;
    cfg.streams.lc_temporal_factors = factors;
    cfg.streams.lc_spatial_factor = spatial;
    const ModelWeights w = ModelWeights::initialize(cfg, 2);
    const CompressedMemory m = long_term_compress(random_window(rng, 16, 0, cfg), w, cfg);
    Index prod = 1;
    for (Index f : factors) prod *= f;
    EXPECT_EQ(m.grid, (GridExtents{16 / prod, 4 / spatial, 4 / spatial}));
    EXPECT_EQ(m.size(), (16 / prod) * (4 / spatial) * (4 / spatial));
  }
}

TEST(LongTermCompress, ShortWindowIsRightAlignedAndTruncated) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 3);
  Rng rng(3);
  const auto window = random_window(rng, 7, 10, cfg);
  const CompressedMemory m = long_term_compress(window, w, cfg);
  EXPECT_EQ(m.first_chunk, 13);
  EXPECT_EQ(m.last_chunk, 16);
  EXPECT_EQ(m.grid.t, 1);
  const std::vector<ChunkTokens> tail(window.begin() + 3, window.end());
  EXPECT_EQ(long_term_compress(tail, w, cfg).tokens.value(), m.tokens.value());

  EXPECT_TRUE(long_term_compress(std::span(window).first(3), w, cfg).empty());
  EXPECT_TRUE(long_term_compress({}, w, cfg).empty());
}

TEST(LongTermCompress, MatchesPairLoop) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 4);
  Rng rng(4);
  for (Index n : {4, 8, 13, 16}) {
    const auto window = random_window(rng, n, 0, cfg);
    EXPECT_LT(max_diff(long_term_compress(window, w, cfg).tokens.value(), oracle::long_term(values(window), w, cfg)),
              1e-12);
  }
}

TEST(LongTermCompress, DegenerateStridesWithZeroPathsIsIdentity) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.streams.lc_temporal_factors = {1, 1, 1, 1};
  cfg.streams.lc_spatial_factor = 1;
  const ModelWeights w = ModelWeights::initialize(cfg, 5);
  for (const auto& b : w.long_term) {
    testing::zero_out(b.w_v);
    testing::zero_out(b.mlp_w2);
    testing::zero_out(b.mlp_b2);
  }
  Rng rng(5);
  const auto window = random_window(rng, 6, 0, cfg);
  const Matrix out = long_term_compress(window, w, cfg).tokens.value();
  ASSERT_EQ(out.rows(), 6 * 16);
  for (Index c = 0; c < 6; ++c) {
    EXPECT_EQ(out.middleRows(c * 16, 16), window[static_cast<std::size_t>(c)].tokens.value().topRows(16));
  }
}

TEST(LongTermCompress, BufferParametersGetExactZeroGradient) {
  const ModelConfig cfg = testing::micro_config();
  const ModelWeights w = ModelWeights::initialize(cfg, 6);
  Rng rng(6);
  const auto window = encoded_window(rng, 4, 0, w, cfg);
  const CompressedMemory m = long_term_compress(window, w, cfg);
  w.zero_grad();
  sum(mul(m.tokens, m.tokens)).backward();
  bool lc_moved = false;
  for (const auto& [name, p] : w.parameters()) {
    if (is_stream_buffer_parameter(name)) {
      EXPECT_TRUE((p.grad().array() == 0.0).all()) << name;
    }
    if (name.rfind("long.", 0) == 0 && p.grad().cwiseAbs().maxCoeff() > 0) lc_moved = true;
  }
  EXPECT_TRUE(lc_moved);
}

TEST(ShortTerm, SingleChunkMatchesPairLoop) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 7);
  Rng rng(7);
  const auto window = random_window(rng, 1, 4, cfg);
  const ShortTermResult r = short_term_forward(window, nullptr, w, cfg);
  EXPECT_EQ(r.logits.rows(), 1);
  const Matrix want = oracle::short_term_logits(values(window), chunk_ids(window), Matrix(0, cfg.d_model), w, cfg);
  EXPECT_LT(max_diff(r.logits.value(), want), 1e-12);
}

TEST(ShortTerm, FullWindowWithMemoryMatchesPairLoop) {
  for (FusionOp op : {FusionOp::kCrossAttention, FusionOp::kSelfAttention}) {
    ModelConfig cfg = ModelConfig::toy();
    cfg.streams.fusion_op = op;
    const ModelWeights w = ModelWeights::initialize(cfg, 8);
    Rng rng(8);
    const auto past = random_window(rng, 16, 0, cfg);
    const auto window = random_window(rng, 4, 16, cfg);
    const CompressedMemory m = long_term_compress(past, w, cfg);
    const Matrix got = short_term_forward(window, &m, w, cfg).logits.value();
    const Matrix want = oracle::short_term_logits(values(window), chunk_ids(window), m.tokens.value(), w, cfg);
    EXPECT_LT(max_diff(got, want), 1e-12);
  }
}

TEST(ShortTerm, PerturbingChunkKOnlyMovesLaterLogits) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 9);
  Rng rng(9);
  const auto past = random_window(rng, 16, 0, cfg);
  const CompressedMemory m = long_term_compress(past, w, cfg);
  const auto window = random_window(rng, 8, 16, cfg);
  const Matrix base = short_term_forward(window, &m, w, cfg).logits.value();
  for (Index k = 0; k < 8; ++k) {
    auto changed = window;
    Matrix t = changed[static_cast<std::size_t>(k)].tokens.value();
    t += random_matrix(rng, t.rows(), t.cols(), 0.5);
    changed[static_cast<std::size_t>(k)].tokens = Tensor::constant(t);
    const Matrix out = short_term_forward(changed, &m, w, cfg).logits.value();
    for (Index c = 0; c < 8; ++c) {
      if (c < k) {
        EXPECT_EQ(out.row(c), base.row(c)) << "k=" << k << " c=" << c;
      } else {
        EXPECT_NE(out.row(c), base.row(c)) << "k=" << k << " c=" << c;
      }
    }
  }
}

TEST(ShortTerm, MemoryChangesLogitsAndGradientsStopAtBuffer) {
  const ModelConfig cfg = testing::micro_config();
  const ModelWeights w = ModelWeights::initialize(cfg, 10);
  Rng rng(10);
  const auto past = encoded_window(rng, 4, 0, w, cfg);
  const auto window = encoded_window(rng, 2, 4, w, cfg);
  const CompressedMemory m = long_term_compress(past, w, cfg);
  const Matrix with = short_term_forward(window, &m, w, cfg).logits.value();
  const Matrix without = short_term_forward(window, nullptr, w, cfg).logits.value();
  EXPECT_GT(max_diff(with, without), 1e-9);

  // Loss through memory only: detach the short window.
  std::vector<ChunkTokens> detached;
  for (const auto& c : window) detached.push_back({c.chunk_index, stop_gradient(c.tokens)});
  w.zero_grad();
  sum(short_term_forward(detached, &m, w, cfg).logits).backward();
  for (const auto& [name, p] : w.parameters()) {
    if (is_stream_buffer_parameter(name)) {
      EXPECT_TRUE((p.grad().array() == 0.0).all()) << name;
    }
    // The last compression layer sees a single key, so only its value and MLP paths carry gradient.
    const bool value_path = name.find("w_v") != std::string::npos || name.find("mlp") != std::string::npos;
    if (name.rfind("long.", 0) == 0 && value_path) {
      EXPECT_GT(p.grad().cwiseAbs().maxCoeff(), 0.0) << name;
    }
  }

  // Through the short window, the buffer parameters receive gradient.
  w.zero_grad();
  sum(short_term_forward(window, &m, w, cfg).logits).backward();
  EXPECT_GT(w.find("spatial.0.w_q")->grad().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(w.find("embed.proj_w")->grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(ShortTerm, FusionLayerPositionsAllTrain) {
  for (FusionOp op : {FusionOp::kCrossAttention, FusionOp::kSelfAttention}) {
    for (Index layer : {Index{1}, Index{2}, Index{4}}) {
      ModelConfig cfg = testing::micro_config();
      cfg.streams.l_sm = 4;
      cfg.streams.fusion_layer = layer;
      cfg.streams.fusion_op = op;
      cfg.validate();
      const ModelWeights w = ModelWeights::initialize(cfg, 11);
      Rng rng(11);
      const auto past = encoded_window(rng, 4, 0, w, cfg);
      const auto window = encoded_window(rng, 2, 4, w, cfg);
      const CompressedMemory m = long_term_compress(past, w, cfg);
      const Tensor logits = short_term_forward(window, &m, w, cfg).logits;
      ASSERT_TRUE(logits.value().allFinite());
      w.zero_grad();
      sum(mul(logits, logits)).backward();
      double lc = 0.0;
      for (const auto& [name, p] : w.parameters()) {
        ASSERT_TRUE(p.grad().allFinite()) << name;
        if (name.rfind("long.", 0) == 0) lc = std::max(lc, p.grad().cwiseAbs().maxCoeff());
      }
      EXPECT_GT(lc, 0.0) << "fusion layer " << layer;
    }
  }
}

TEST(Fusion, EmptyMemorySkips) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 12);
  Rng rng(12);
  const Tensor x = Tensor::constant(random_matrix(rng, 34, cfg.d_model));
  const CompressedMemory empty;
  const auto ids = expand_chunk_indices(std::vector<std::int64_t>{0, 1}, 17);
  EXPECT_EQ(cross_attention_fuse(x, empty, w, cfg).value(), x.value());
  EXPECT_EQ(fuse(x, ids, empty, w, cfg).value(), x.value());
}

TEST(Fusion, CrossAttentionZeroValuePathIsIdentity) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 13).clone();
  testing::zero_out(w.fusion->w_v);
  testing::zero_out(w.fusion->mlp_w2);
  testing::zero_out(w.fusion->mlp_b2);
  Rng rng(13);
  const Tensor x = Tensor::constant(random_matrix(rng, 17, cfg.d_model));
  CompressedMemory one;
  one.tokens = Tensor::constant(random_matrix(rng, 1, cfg.d_model));
  one.grid = {1, 1, 1};
  EXPECT_EQ(cross_attention_fuse(x, one, w, cfg).value(), x.value());
}

TEST(Fusion, SelfAttentionMatchesConcatenatedOracle) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.streams.fusion_op = FusionOp::kSelfAttention;
  const ModelWeights w = ModelWeights::initialize(cfg, 14);
  Rng rng(14);
  const Matrix x = random_matrix(rng, 3 * 17, cfg.d_model);
  CompressedMemory m;
  m.tokens = Tensor::constant(random_matrix(rng, 16, cfg.d_model));
  m.grid = {4, 2, 2};
  const auto ids = expand_chunk_indices(std::vector<std::int64_t>{5, 6, 7}, 17);
  const auto& block = w.short_term[2];
  const Matrix got = self_attention_fuse(Tensor::constant(x), ids, m, block, cfg).value();
  Matrix kv(16 + x.rows(), cfg.d_model);
  kv << m.tokens.value(), x;
  std::vector<std::int64_t> keys(16, kMemoryChunk);
  keys.insert(keys.end(), ids.begin(), ids.end());
  const Matrix want =
      oracle::attention_block(x, kv, block, cfg.short_term_block(), {1, x.rows(), 1}, {1, kv.rows(), 1}, &ids, &keys);
  EXPECT_LT(max_diff(got, want), 1e-12);
}

TEST(Classify, Examples) {
  const Vector u = classify(Vector::Constant(4, 1.3));
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(u(i), 0.25, 1e-15);
  Vector l(2);
  l << 0.0, std::log(3.0);
  const Vector p = classify(l);
  EXPECT_NEAR(p(0), 0.25, 1e-15);
  EXPECT_NEAR(p(1), 0.75, 1e-15);
}

TEST(Classify, ArgmaxPreservedAndNormalized) {
  Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    const Vector l = random_matrix(rng, 1, 5, 3.0);
    const Vector p = classify(l);
    Index a = 0, b = 0;
    l.maxCoeff(&a);
    p.maxCoeff(&b);
    EXPECT_EQ(a, b);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  }
}

TEST(StreamsConfigTest, ValidationRejectsBadSchedules) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.streams.lc_temporal_factors = {2, 2, 1};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ModelConfig::toy();
  cfg.streams.lc_temporal_factors = {2, 2, 2, 4};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ModelConfig::toy();
  cfg.streams.fusion_layer = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.streams.fusion_layer = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::toy().validate());
}

}  // namespace
}  // namespace e2eload
