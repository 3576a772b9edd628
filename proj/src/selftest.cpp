#include "e2eload/selftest.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <string>

#include "e2eload/formats.hpp"
#include "e2eload/inference.hpp"
#include "e2eload/metrics.hpp"
#include "e2eload/oracle.hpp"
#include "e2eload/rng.hpp"

namespace e2eload {
namespace {

Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.rows() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

ModelConfig selftest_config(FusionOp op) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.d_model = 16;
  cfg.streams.t_short = 4;
  cfg.streams.t_long = 8;
  cfg.streams.l_sm = 2;
  cfg.streams.l_lc = 2;
  cfg.streams.lc_temporal_factors = {2, 2};
  cfg.streams.fusion_layer = 1;
  cfg.streams.fusion_op = op;
  return cfg;
}

std::vector<ChunkTokens> random_chunks(Rng& rng, Index n, std::int64_t first, const ModelConfig& cfg) {
  std::vector<ChunkTokens> out;
  for (Index i = 0; i < n; ++i) {
    out.push_back({first + i, Tensor::constant(random_matrix(rng, cfg.tokens_per_chunk(), cfg.d_model))});
  }
  return out;
}

class Suite {
 public:
  explicit Suite(std::ostream& out) : out_(out) {}

  void check(const std::string& name, const std::function<bool(std::string&)>& fn) {
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    out_ << (ok ? "PASS " : "FAIL ") << name;
    if (!detail.empty()) out_ << "  (" << detail << ")";
    out_ << '\n';
    failures_ += ok ? 0 : 1;
  }

  int failures() const { return failures_; }

 private:
  std::ostream& out_;
  int failures_ = 0;
};

bool within(double err, double tol, std::string& detail) {
  detail = "max abs error " + format_double(err);
  return err <= tol;
}

}  // namespace

int run_selftest(std::ostream& out) {
  Suite suite(out);
  constexpr double kTol = 1e-12;

  suite.check("spatial attention matches pair-loop oracle", [](std::string& d) {
    const ModelConfig cfg = selftest_config(FusionOp::kCrossAttention);
    const ModelWeights w = ModelWeights::initialize(cfg, 11);
    Rng rng(1);
    const Matrix x = random_matrix(rng, cfg.tokens_per_chunk(), cfg.d_model);
    const ChunkTokens got = spatial_encode({0, Tensor::constant(x)}, w.spatial, cfg.spatial_block());
    return within(max_abs_diff(got.tokens.value(), oracle::spatial_encode(x, w, cfg)), kTol, d);
  });

  suite.check("long-term compression matches pair-loop oracle", [](std::string& d) {
    const ModelConfig cfg = selftest_config(FusionOp::kCrossAttention);
    const ModelWeights w = ModelWeights::initialize(cfg, 12);
    Rng rng(2);
    const auto chunks = random_chunks(rng, 6, 0, cfg);
    std::vector<Matrix> raw;
    for (const auto& c : chunks) raw.push_back(c.tokens.value());
    const CompressedMemory m = long_term_compress(chunks, w, cfg);
    return within(max_abs_diff(m.tokens.value(), oracle::long_term(raw, w, cfg)), kTol, d);
  });

  for (FusionOp op : {FusionOp::kCrossAttention, FusionOp::kSelfAttention}) {
    const std::string label = op == FusionOp::kCrossAttention ? "cross" : "self";
    suite.check("causal short-term stack with " + label + "-attention fusion matches oracle", [op](std::string& d) {
      const ModelConfig cfg = selftest_config(op);
      const ModelWeights w = ModelWeights::initialize(cfg, 13);
      Rng rng(3);
      const auto long_chunks = random_chunks(rng, 8, 0, cfg);
      const auto window = random_chunks(rng, 4, 8, cfg);
      const CompressedMemory m = long_term_compress(long_chunks, w, cfg);
      const ShortTermResult r = short_term_forward(window, &m, w, cfg);
      std::vector<Matrix> raw;
      std::vector<std::int64_t> idx;
      for (const auto& c : window) {
        raw.push_back(c.tokens.value());
        idx.push_back(c.chunk_index);
      }
      return within(max_abs_diff(r.logits.value(), oracle::short_term_logits(raw, idx, m.tokens.value(), w, cfg)),
                    kTol, d);
    });
  }

  suite.check("cross-entropy matches direct evaluation", [](std::string& d) {
    Rng rng(4);
    const Matrix logits = random_matrix(rng, 3, 4);
    Matrix labels = Matrix::Zero(3, 4);
    labels(0, 1) = labels(1, 3) = labels(2, 0) = 1.0;
    const double got = cross_entropy_sum(Tensor::constant(logits), labels).item();
    return within(std::abs(got - oracle::cross_entropy(logits, labels)), kTol, d);
  });

  suite.check("efficient and regular inference agree before eviction", [](std::string& d) {
    ModelConfig cfg = selftest_config(FusionOp::kCrossAttention);
    auto w = std::make_shared<const ModelWeights>(ModelWeights::initialize(cfg, 14));
    EngineOptions ri = preset_options(Preset::kBaseline);
    EngineOptions ei = preset_options(Preset::kBaselineEi);
    Engine a(cfg, w, ri), b(cfg, w, ei);
    Rng rng(5);
    for (Index i = 0; i < cfg.streams.t_short; ++i) {
      const Matrix patches = random_matrix(rng, cfg.chunk().patches_per_chunk(), cfg.chunk().patch_dim());
      const Vector pa = a.step_patches(patches).probabilities;
      const Vector pb = b.step_patches(patches).probabilities;
      if (pa != pb) {
        d = "step " + std::to_string(i) + " differs";
        return false;
      }
    }
    return true;
  });

  suite.check("RSV round trip is bit exact", [](std::string& d) {
    Frames f(2, 3, 5);
    Rng rng(6);
    for (double& p : f.pixels) p = static_cast<double>(rng.below(256)) / 255.0;
    const auto bytes = encode_rsv(f);
    const Frames g = decode_rsv(bytes);
    d = std::to_string(bytes.size()) + " bytes";
    return g.pixels == f.pixels && g.count == 2 && g.height == 3 && g.width == 5 && encode_rsv(g) == bytes;
  });

  suite.check("checkpoint round trip is lossless at float precision", [](std::string& d) {
    const ModelConfig cfg = selftest_config(FusionOp::kCrossAttention);
    const ModelWeights w = ModelWeights::initialize(cfg, 15);
    std::vector<CheckpointTensor> tensors;
    for (const auto& [name, p] : w.parameters()) {
      CheckpointTensor t{name, {}, {}};
      for (Index e : p.shape()) t.extents.push_back(static_cast<std::uint32_t>(e));
      for (Index i = 0; i < p.rows(); ++i)
        for (Index j = 0; j < p.cols(); ++j) t.values.push_back(static_cast<float>(p.value()(i, j)));
      tensors.push_back(std::move(t));
    }
    const auto back = decode_checkpoint(encode_checkpoint(tensors));
    double worst = 0.0;
    for (std::size_t i = 0; i < back.size(); ++i) {
      if (back[i].name != tensors[i].name || back[i].values != tensors[i].values) {
        d = "tensor " + back[i].name + " changed";
        return false;
      }
      const Matrix& v = w.parameters()[i].second.value();
      for (Index k = 0; k < v.size(); ++k) {
        const double orig = v(k / v.cols(), k % v.cols());
        worst = std::max(worst, std::abs(orig - back[i].values[static_cast<std::size_t>(k)]) /
                                    std::max(std::abs(orig), 1e-30));
      }
    }
    d = "worst relative rounding " + format_double(worst);
    return worst <= 1e-7;
  });

  suite.check("average precision hand cases", [](std::string& d) {
    const std::vector<double> s1{0.9, 0.8, 0.7};
    const bool l1[] = {true, false, true};
    const std::vector<double> s2{0.9, 0.8, 0.7, 0.6};
    const bool l2[] = {true, false, false, true};
    const double ap = average_precision(s1, l1);
    const double cap = calibrated_ap(s2, l2);
    d = "ap " + format_double(ap) + ", mcap " + format_double(cap);
    return std::abs(ap - (1.0 + 2.0 / 3.0) / 2.0) < 1e-15 && std::abs(cap - (1.0 + 2.0 / 4.0) / 2.0) < 1e-15 &&
           cap == average_precision(s2, l2);
  });

  suite.check("layer norm gradient matches finite differences", [](std::string& d) {
    Rng rng(7);
    const Matrix x = random_matrix(rng, 3, 5);
    const Tensor g = Tensor::constant(random_matrix(rng, 1, 5));
    const Tensor b = Tensor::constant(random_matrix(rng, 1, 5));
    const Tensor weights = Tensor::constant(random_matrix(rng, 3, 5));
    const double err =
        grad_check([&](const Tensor& t) { return sum(mul(gelu(layer_norm(t, g, b)), weights)); }, x, 1e-6);
    d = "relative error " + format_double(err);
    return err <= 1e-6;
  });

  out << (suite.failures() == 0 ? "selftest: all checks passed\n"
                                : "selftest: " + std::to_string(suite.failures()) + " check(s) failed\n");
  return suite.failures();
}

}  // namespace e2eload
