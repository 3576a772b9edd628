#include <gtest/gtest.h>

#include "e2eload/inference.hpp"
#include "e2eload/oracle.hpp"
#include "test_util.hpp"

namespace e2eload {
namespace {

using testing::random_matrix;

ChunkTokens entry(std::int64_t index) {
  return {index, Tensor::constant(Matrix::Constant(2, 3, static_cast<double>(index)))};
}

std::vector<std::int64_t> indices(const std::vector<ChunkTokens>& v) {
  std::vector<std::int64_t> out;
  for (const auto& c : v) out.push_back(c.chunk_index);
  return out;
}

std::vector<std::int64_t> contents(const StreamBuffer& b) {
  std::vector<std::int64_t> out;
  for (Index i = 0; i < b.size(); ++i) out.push_back(b.at(i).chunk_index);
  return out;
}

TEST(StreamBufferTest, RingSemantics) {
  StreamBuffer b(3);
  for (std::int64_t i = 0; i < 4; ++i) b.push(entry(i));
  EXPECT_EQ(contents(b), (std::vector<std::int64_t>{1, 2, 3}));
  EXPECT_EQ(b.oldest_index(), 1);
  EXPECT_EQ(b.newest_index(), 3);
  EXPECT_EQ(b.at(0).tokens.value()(0, 0), 1.0);
}

TEST(StreamBufferTest, FirstPush) {
  StreamBuffer b(3);
  EXPECT_TRUE(b.empty());
  b.push(entry(0));
  EXPECT_EQ(contents(b), (std::vector<std::int64_t>{0}));
}

TEST(StreamBufferTest, EmptyBufferAcceptsAnyStart) {
  StreamBuffer b(2);
  b.push(entry(17));
  b.push(entry(18));
  EXPECT_EQ(b.newest_index(), 18);
}

TEST(StreamBufferTest, OutOfOrderPushIsOrderingError) {
  StreamBuffer b(3);
  b.push(entry(0));
  EXPECT_THROW(b.push(entry(2)), OrderingError);
  EXPECT_THROW(b.push(entry(0)), OrderingError);
  EXPECT_EQ(contents(b), (std::vector<std::int64_t>{0}));
}

TEST(StreamBufferTest, LongSoakKeepsConstantFootprint) {
  StreamBuffer b(40);
  for (std::int64_t i = 0; i < 1000; ++i) {
    b.push(entry(i));
    ASSERT_EQ(b.size(), std::min<Index>(i + 1, 40));
    ASSERT_EQ(b.capacity(), 40);
    for (Index k = 1; k < b.size(); ++k) ASSERT_EQ(b.at(k).chunk_index, b.at(k - 1).chunk_index + 1);
    ASSERT_EQ(b.newest_index(), i);
  }
}

TEST(StreamBufferTest, WarmUpWindows) {
  StreamBuffer b(24);
  for (std::int64_t i = 0; i < 5; ++i) b.push(entry(i));
  EXPECT_EQ(b.window_short(8).size(), 5u);
  EXPECT_TRUE(b.window_long(8, 16).empty());
}

TEST(StreamBufferTest, SteadyStateWindows) {
  StreamBuffer b(40);
  for (std::int64_t i = 0; i < 40; ++i) b.push(entry(i));
  const auto s = indices(b.window_short(8));
  const auto l = indices(b.window_long(8, 32));
  ASSERT_EQ(s.size(), 8u);
  ASSERT_EQ(l.size(), 32u);
  EXPECT_EQ(s.front(), 32);
  EXPECT_EQ(s.back(), 39);
  EXPECT_EQ(l.front(), 0);
  EXPECT_EQ(l.back(), 31);
}

TEST(StreamBufferTest, WindowsCoverNewestEntriesAtEveryFillLevel) {
  for (const auto& [ts, tl] : std::vector<std::pair<Index, Index>>{{8, 16}, {2, 4}, {3, 0}, {1, 5}}) {
    for (Index fill = 0; fill <= ts + tl + 5; ++fill) {
      StreamBuffer b(ts + tl);
      for (std::int64_t i = 0; i < fill; ++i) b.push(entry(i));
      auto s = indices(b.window_short(ts));
      const auto l = indices(b.window_long(ts, tl));
      EXPECT_EQ(static_cast<Index>(s.size()), std::min(ts, fill));
      EXPECT_EQ(static_cast<Index>(l.size()), std::clamp<Index>(fill - ts, 0, tl));
      std::vector<std::int64_t> joined = l;
      joined.insert(joined.end(), s.begin(), s.end());
      const Index expected = std::min(fill, ts + tl);
      ASSERT_EQ(static_cast<Index>(joined.size()), expected);
      for (Index k = 0; k < expected; ++k) EXPECT_EQ(joined[static_cast<std::size_t>(k)], fill - expected + k);
    }
  }
}

TEST(StreamBufferTest, ReadsArePure) {
  StreamBuffer b(6);
  for (std::int64_t i = 0; i < 9; ++i) b.push(entry(i));
  const auto before = contents(b);
  const auto l1 = indices(b.window_long(2, 4));
  const auto s1 = indices(b.window_short(2));
  const auto s2 = indices(b.window_short(2));
  const auto l2 = indices(b.window_long(2, 4));
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(contents(b), before);
}

TEST(SpatialEncode, EmptyStackIsIdentity) {
  Rng rng(1);
  const Tensor x = Tensor::constant(random_matrix(rng, 17, 8));
  const ChunkTokens out = spatial_encode({3, x}, {}, testing::block_config(8));
  EXPECT_EQ(out.tokens.value(), x.value());
  EXPECT_EQ(out.chunk_index, 3);
}

TEST(SpatialEncode, StatelessAcrossTime) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 2);
  Rng rng(2);
  const Tensor x = Tensor::constant(random_matrix(rng, 17, cfg.d_model));
  const Matrix a = spatial_encode({0, x}, w.spatial, cfg.spatial_block()).tokens.value();
  spatial_encode({1, Tensor::constant(random_matrix(rng, 17, cfg.d_model))}, w.spatial, cfg.spatial_block());
  const Matrix b = spatial_encode({5, x}, w.spatial, cfg.spatial_block()).tokens.value();
  EXPECT_EQ(a, b);
}

TEST(SpatialEncode, MatchesComposedPairLoop) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 3);
  Rng rng(3);
  const Matrix x = random_matrix(rng, 17, cfg.d_model);
  const Matrix got = spatial_encode({0, Tensor::constant(x)}, w.spatial, cfg.spatial_block()).tokens.value();
  EXPECT_LT((got - oracle::spatial_encode(x, w, cfg)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpatialEncode, OncePerChunkInBothEngines) {
  ModelConfig cfg = testing::micro_config();
  auto w = std::make_shared<const ModelWeights>(ModelWeights::initialize(cfg, 4));
  Rng rng(4);
  const auto patches = testing::random_patches(rng, 30, cfg);
  for (Preset p : {Preset::kBaseline, Preset::kFull, Preset::kBaselineLc, Preset::kBaselineEi}) {
    Engine e(cfg, w, preset_options(p));
    for (const auto& m : patches) e.step_patches(m);
    EXPECT_EQ(e.counters().spatial_encodes, 30u) << preset_name(p);
    EXPECT_EQ(e.buffer().size(), cfg.streams.t_short + cfg.streams.t_long);
  }
}

}  // namespace
}  // namespace e2eload
