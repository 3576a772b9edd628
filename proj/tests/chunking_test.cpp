#include <gtest/gtest.h>

#include "test_util.hpp"

namespace e2eload {
namespace {

using testing::random_matrix;

ChunkConfig geometry(Index tau, Index t) {
  ChunkConfig c;
  c.tau = tau;
  c.t_sample = t;
  return c;
}

Frames random_frames(Rng& rng, Index n, Index h, Index w) {
  Frames f(n, h, w);
  for (double& p : f.pixels) p = rng.uniform();
  return f;
}

TEST(SampleFrames, IndexFormula) {
  EXPECT_EQ(sampled_frame_indices(geometry(4, 2)), (std::vector<Index>{0, 2}));
  EXPECT_EQ(sampled_frame_indices(geometry(4, 4)), (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_EQ(sampled_frame_indices(geometry(6, 2)), (std::vector<Index>{0, 3}));
}

TEST(SampleFrames, PicksTheIndexedFrames) {
  Rng rng(1);
  const ChunkConfig cfg = geometry(6, 2);
  const Frames f = random_frames(rng, 6, 4, 4);
  const Frames s = sample_frames(f, cfg);
  ASSERT_EQ(s.count, 2);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x)
      for (Index c = 0; c < 3; ++c) {
        EXPECT_EQ(s.at(0, y, x, c), f.at(0, y, x, c));
        EXPECT_EQ(s.at(1, y, x, c), f.at(3, y, x, c));
      }
}

TEST(SampleFrames, IdentityWhenAllFramesKept) {
  Rng rng(2);
  const Frames f = random_frames(rng, 4, 3, 5);
  EXPECT_EQ(sample_frames(f, geometry(4, 4)).pixels, f.pixels);
}

TEST(SampleFrames, WrongFrameCountIsShapeError) {
  Frames f(3, 4, 4);
  EXPECT_THROW(sample_frames(f, geometry(4, 2)), ShapeError);
}

TEST(EmbedChunk, ToyGeometryHasSeventeenTokens) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 1);
  Rng rng(3);
  const ChunkTokens t = embed_chunk(random_frames(rng, 4, 32, 32), 0, cfg.chunk(), w.embedding);
  EXPECT_EQ(t.tokens.rows(), 17);
  EXPECT_EQ(t.tokens.cols(), 64);
}

TEST(EmbedChunk, TokenCountLaw) {
  for (Index H : {8, 16, 24})
    for (Index W : {8, 16})
      for (Index ph : {2, 4, 8})
        for (Index pw : {4, 8}) {
          if (H % ph || W % pw) continue;
          ModelConfig cfg = ModelConfig::toy();
          cfg.frame_height = H;
          cfg.frame_width = W;
          cfg.patch_h = ph;
          cfg.patch_w = pw;
          cfg.d_model = 4;
          cfg.streams.lc_spatial_factor = 1;
          const ModelWeights w = ModelWeights::initialize(cfg, 2);
          const ChunkTokens t = embed_chunk(Frames(4, H, W), 5, cfg.chunk(), w.embedding);
          EXPECT_EQ(t.tokens.rows(), (H / ph) * (W / pw) + 1);
        }
}

TEST(EmbedChunk, ZeroFramesGiveZeroPatchesAndLearnedCls) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 3).clone();
  testing::zero_out(w.embedding.proj_b);
  testing::zero_out(w.embedding.pos_spatial);
  testing::zero_out(w.embedding.pos_temporal);
  Tensor cls = w.embedding.cls;
  Rng rng(4);
  cls.mutable_leaf_value() = random_matrix(rng, 1, cfg.d_model);
  const Matrix t = embed_chunk(Frames(4, 32, 32), 9, cfg.chunk(), w.embedding).tokens.value();
  EXPECT_TRUE((t.topRows(16).array() == 0.0).all());
  EXPECT_EQ(t.row(16), cls.value().row(0));
}

TEST(EmbedChunk, PhasePeriodRepeatsBitExactly) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 4);
  Rng rng(5);
  const Frames f = random_frames(rng, 4, 32, 32);
  const Index period = 2 * cfg.streams.t_short;
  for (std::int64_t k : {0, 3, 15}) {
    const Matrix a = embed_chunk(f, k, cfg.chunk(), w.embedding).tokens.value();
    const Matrix b = embed_chunk(f, k + period, cfg.chunk(), w.embedding).tokens.value();
    const Matrix c = embed_chunk(f, k + 1, cfg.chunk(), w.embedding).tokens.value();
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
  }
}

TEST(EmbedChunk, PixelChangeTouchesOnlyItsPatch) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 5);
  Rng rng(6);
  const Frames f = random_frames(rng, 4, 32, 32);
  const Matrix base = embed_chunk(f, 2, cfg.chunk(), w.embedding).tokens.value();
  for (int trial = 0; trial < 20; ++trial) {
    Frames g = f;
    const Index y = static_cast<Index>(rng.below(32)), x = static_cast<Index>(rng.below(32));
    const Index frame = trial % 2 == 0 ? 0 : 2;  // sampled frames for tau=4, t=2
    g.at(frame, y, x, static_cast<Index>(rng.below(3))) += 0.5;
    const Matrix out = embed_chunk(g, 2, cfg.chunk(), w.embedding).tokens.value();
    const Index patch = (y / 8) * 4 + x / 8;
    for (Index r = 0; r < out.rows(); ++r) {
      if (r == patch) {
        EXPECT_NE(out.row(r), base.row(r));
      } else {
        EXPECT_EQ(out.row(r), base.row(r)) << "row " << r;
      }
    }
  }
}

TEST(EmbedChunk, UnsampledFrameHasNoEffect) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 6);
  Rng rng(7);
  const Frames f = random_frames(rng, 4, 32, 32);
  Frames g = f;
  g.at(1, 5, 5, 0) = 1.0 - g.at(1, 5, 5, 0);
  EXPECT_EQ(embed_chunk(f, 0, cfg.chunk(), w.embedding).tokens.value(),
            embed_chunk(g, 0, cfg.chunk(), w.embedding).tokens.value());
}

TEST(EmbedChunk, PatchTokensAreAffineInPixels) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 7);
  Rng rng(8);
  const Frames f = random_frames(rng, 4, 32, 32);
  const Matrix zero = embed_chunk(Frames(4, 32, 32), 1, cfg.chunk(), w.embedding).tokens.value();
  const Matrix one = embed_chunk(f, 1, cfg.chunk(), w.embedding).tokens.value();
  for (double alpha : {0.25, 0.5, 2.0}) {
    Frames g = f;
    for (double& p : g.pixels) p *= alpha;
    const Matrix scaled = embed_chunk(g, 1, cfg.chunk(), w.embedding).tokens.value();
    const Matrix lhs = (scaled - zero).topRows(16);
    const Matrix rhs = alpha * (one - zero).topRows(16);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EmbedChunk, DimensionMismatchIsShapeError) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelWeights w = ModelWeights::initialize(cfg, 8);
  EXPECT_THROW(embed_chunk(Frames(4, 16, 32), 0, cfg.chunk(), w.embedding), ShapeError);
  EXPECT_THROW(embed_chunk(Frames(3, 32, 32), 0, cfg.chunk(), w.embedding), ShapeError);
  EXPECT_THROW(embed_patches(Matrix::Zero(16, 10), 0, cfg.chunk(), w.embedding), ShapeError);
}

TEST(EmbedChunk, PatchLayoutIsRowMajorOverSlots) {
  ChunkConfig cfg = geometry(2, 1);
  cfg.frame_height = 4;
  cfg.frame_width = 4;
  cfg.patch_h = 2;
  cfg.patch_w = 2;
  Frames f(2, 4, 4);
  f.at(0, 2, 1, 0) = 1.0;  // slot (1, 0), offset (0, 1), channel 0
  const Matrix p = chunk_patches(f, cfg);
  EXPECT_EQ(p.rows(), 4);
  EXPECT_EQ(p.cols(), 12);
  EXPECT_EQ(p.sum(), 1.0);
  EXPECT_EQ(p(2, 3), 1.0);
}

TEST(ChunkConfigTest, RejectsNonDividingPatches) {
  ChunkConfig c;
  c.patch_h = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  ChunkConfig d;
  d.t_sample = 8;
  EXPECT_THROW(d.validate(), ConfigError);
}

}  // namespace
}  // namespace e2eload
