#include "e2eload/oracle.hpp"

#include <cmath>
#include <limits>

namespace e2eload::oracle {
namespace {

Matrix add_bias_rows(Matrix x, const Matrix& bias) {
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) x(i, j) += bias(0, j);
  return x;
}

GridExtents flat_grid(Index rows) { return {1, rows, 1}; }

}  // namespace

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
  Matrix y(x.rows(), x.cols());
  const auto n = static_cast<double>(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= n;
    double var = 0.0;
    for (Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= n;
    for (Index j = 0; j < x.cols(); ++j) y(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * gain(0, j) + bias(0, j);
  }
  return y;
}

Matrix gelu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) y(i, j) = 0.5 * x(i, j) * (1.0 + std::erf(x(i, j) / std::sqrt(2.0)));
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

Matrix downsample(const Matrix& x, const GridExtents& grid, const Strides& s, const Matrix* kernel,
                  const Matrix* bias) {
  const GridExtents out{grid.t / s.t, grid.h / s.h, grid.w / s.w};
  Matrix y = Matrix::Zero(out.t * out.h * out.w, x.cols());
  for (Index ot = 0; ot < out.t; ++ot)
    for (Index oh = 0; oh < out.h; ++oh)
      for (Index ow = 0; ow < out.w; ++ow) {
        const Index o = (ot * out.h + oh) * out.w + ow;
        for (Index ch = 0; ch < x.cols(); ++ch) {
          double acc = kernel ? (*bias)(0, ch) : 0.0;
          for (Index a = 0; a < s.t; ++a)
            for (Index b = 0; b < s.h; ++b)
              for (Index c = 0; c < s.w; ++c) {
                const Index t = ot * s.t + a, h = oh * s.h + b, w = ow * s.w + c;
                const double v = x((t * grid.h + h) * grid.w + w, ch);
                if (kernel) {
                  acc += v * (*kernel)((a * s.h + b) * s.w + c, ch);
                } else {
                  acc += v / static_cast<double>(s.t * s.h * s.w);
                }
              }
          y(o, ch) = acc;
        }
      }
  return y;
}

Matrix attention_block(const Matrix& xq, const Matrix& xkv, const AttentionBlockWeights& w,
                       const AttentionBlockConfig& cfg, const GridExtents& q_grid, const GridExtents& kv_grid,
                       const std::vector<std::int64_t>* query_chunks, const std::vector<std::int64_t>* key_chunks) {
  const Matrix nq = layer_norm(xq, w.norm1_gain.value(), w.norm1_bias.value());
  const Matrix nkv = layer_norm(xkv, w.norm1_gain.value(), w.norm1_bias.value());
  Matrix q = matmul(nq, w.w_q.value());
  Matrix k = matmul(nkv, w.w_k.value());
  Matrix v = matmul(nkv, w.w_v.value());
  Matrix residual = xq;
  if (!cfg.q_strides.is_identity()) {
    const Matrix kq = w.q_down->kernel.value(), bq = w.q_down->bias.value();
    q = downsample(q, q_grid, cfg.q_strides, &kq, &bq);
    residual = downsample(xq, q_grid, cfg.q_strides, nullptr, nullptr);
  }
  if (!cfg.kv_strides.is_identity()) {
    const Matrix kk = w.k_down->kernel.value(), bk = w.k_down->bias.value();
    const Matrix kv = w.v_down->kernel.value(), bv = w.v_down->bias.value();
    k = downsample(k, kv_grid, cfg.kv_strides, &kk, &bk);
    v = downsample(v, kv_grid, cfg.kv_strides, &kv, &bv);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  Matrix mixed = Matrix::Zero(q.rows(), v.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    std::vector<double> score(static_cast<std::size_t>(k.rows()), -std::numeric_limits<double>::infinity());
    double best = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < k.rows(); ++j) {
      if (query_chunks && (*key_chunks)[static_cast<std::size_t>(j)] > (*query_chunks)[static_cast<std::size_t>(i)]) {
        continue;
      }
      double dot = 0.0;
      for (Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      score[static_cast<std::size_t>(j)] = dot * scale;
      best = std::max(best, dot * scale);
    }
    double total = 0.0;
    for (double& s : score) {
      s = std::isinf(s) ? 0.0 : std::exp(s - best);
      total += s;
    }
    for (Index j = 0; j < k.rows(); ++j)
      for (Index c = 0; c < v.cols(); ++c) mixed(i, c) += score[static_cast<std::size_t>(j)] / total * v(j, c);
  }

  const Matrix pooled = mixed + residual;
  const Matrix hidden =
      gelu(add_bias_rows(matmul(layer_norm(pooled, w.norm2_gain.value(), w.norm2_bias.value()), w.mlp_w1.value()),
                         w.mlp_b1.value()));
  return pooled + add_bias_rows(matmul(hidden, w.mlp_w2.value()), w.mlp_b2.value());
}

Matrix spatial_encode(const Matrix& tokens, const ModelWeights& weights, const ModelConfig& cfg) {
  Matrix x = tokens;
  for (const auto& block : weights.spatial) {
    x = attention_block(x, x, block, cfg.spatial_block(), flat_grid(x.rows()), flat_grid(x.rows()));
  }
  return x;
}

Matrix long_term(const std::vector<Matrix>& chunk_tokens, const ModelWeights& weights, const ModelConfig& cfg) {
  Index product = 1;
  for (Index f : cfg.streams.lc_temporal_factors) product *= f;
  const auto n = static_cast<Index>(chunk_tokens.size());
  const Index usable = n / product * product;
  if (usable == 0) return Matrix(0, cfg.d_model);
  const Index patches = cfg.chunk().patches_per_chunk();
  Matrix x(usable * patches, cfg.d_model);
  for (Index c = 0; c < usable; ++c) {
    x.middleRows(c * patches, patches) = chunk_tokens[static_cast<std::size_t>(n - usable + c)].topRows(patches);
  }
  GridExtents grid{usable, cfg.chunk().n_h(), cfg.chunk().n_w()};
  for (Index layer = 0; layer < cfg.streams.l_lc; ++layer) {
    const AttentionBlockConfig bc = cfg.long_term_block(layer);
    const GridExtents g = bc.q_strides.is_identity() ? flat_grid(x.rows()) : grid;
    x = attention_block(x, x, weights.long_term[static_cast<std::size_t>(layer)], bc, g, g);
    grid = {grid.t / bc.q_strides.t, grid.h / bc.q_strides.h, grid.w / bc.q_strides.w};
  }
  return x;
}

Matrix short_term_logits(const std::vector<Matrix>& chunk_tokens, const std::vector<std::int64_t>& chunk_indices,
                         const Matrix& memory, const ModelWeights& weights, const ModelConfig& cfg) {
  const Index per = cfg.tokens_per_chunk();
  const auto chunks = static_cast<Index>(chunk_tokens.size());
  Matrix x(chunks * per, cfg.d_model);
  std::vector<std::int64_t> token_chunks;
  for (Index c = 0; c < chunks; ++c) {
    x.middleRows(c * per, per) = chunk_tokens[static_cast<std::size_t>(c)];
    for (Index k = 0; k < per; ++k) token_chunks.push_back(chunk_indices[static_cast<std::size_t>(c)]);
  }
  const AttentionBlockConfig bc = cfg.short_term_block();
  const bool has_memory = memory.rows() > 0;
  for (Index layer = 0; layer < cfg.streams.l_sm; ++layer) {
    const auto& block = weights.short_term[static_cast<std::size_t>(layer)];
    const bool fusion_here = has_memory && layer + 1 == cfg.streams.fusion_layer;
    if (fusion_here && cfg.streams.fusion_op == FusionOp::kSelfAttention) {
      Matrix kv(memory.rows() + x.rows(), x.cols());
      kv << memory, x;
      std::vector<std::int64_t> key_chunks(static_cast<std::size_t>(memory.rows()), -1);
      key_chunks.insert(key_chunks.end(), token_chunks.begin(), token_chunks.end());
      x = attention_block(x, kv, block, bc, flat_grid(x.rows()), flat_grid(kv.rows()), &token_chunks, &key_chunks);
      continue;
    }
    x = attention_block(x, x, block, bc, flat_grid(x.rows()), flat_grid(x.rows()), &token_chunks, &token_chunks);
    if (fusion_here) {
      x = attention_block(x, memory, *weights.fusion, cfg.fusion_block(), flat_grid(x.rows()),
                          flat_grid(memory.rows()));
    }
  }
  Matrix logits(chunks, cfg.streams.num_classes);
  for (Index c = 0; c < chunks; ++c) {
    for (Index j = 0; j < logits.cols(); ++j) {
      double acc = weights.head_b.value()(0, j);
      for (Index d = 0; d < cfg.d_model; ++d) acc += x(c * per + per - 1, d) * weights.head_w.value()(d, j);
      logits(c, j) = acc;
    }
  }
  return logits;
}

double cross_entropy(const Matrix& logits, const Matrix& labels) {
  double loss = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    double total = 0.0;
    for (Index j = 0; j < logits.cols(); ++j) total += std::exp(logits(i, j));
    for (Index j = 0; j < logits.cols(); ++j) loss -= labels(i, j) * std::log(std::exp(logits(i, j)) / total);
  }
  return loss;
}

}  // namespace e2eload::oracle
