#include "e2eload/training.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "e2eload/rng.hpp"
#include "e2eload/stream_buffer.hpp"

namespace e2eload {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("training: learning_rate must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("training: momentum must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("training: steps_per_epoch must be >= 1");
  if (train_t_long < 0) throw ConfigError("training: train_t_long must be >= 0");
  for (Index t : eval_t_long_list) {
    if (t < 0) throw ConfigError("training: eval_t_long values must be >= 0");
  }
  if (grad_clip < 0) throw ConfigError("training: grad_clip must be >= 0");
}

TrainingWindow make_window(const SyntheticStream& stream, Index last_chunk, const ModelConfig& cfg) {
  const Index t_short = cfg.streams.t_short;
  if (last_chunk + 1 < t_short || last_chunk >= stream.chunk_count()) {
    throw ContractError("make_window: chunk " + std::to_string(last_chunk) +
                        " cannot end a window of " + std::to_string(t_short) + " short-term chunks");
  }
  const Index first = std::max<Index>(0, last_chunk + 1 - t_short - cfg.streams.t_long);
  TrainingWindow w;
  w.first_chunk = first;
  w.t_short = t_short;
  const ChunkConfig cc = cfg.chunk();
  for (Index i = first; i <= last_chunk; ++i) w.patches.push_back(chunk_patches(stream.chunk(i), cc));
  w.labels = stream.one_hot(last_chunk + 1 - t_short, t_short, cfg.streams.num_classes);
  return w;
}

std::vector<ChunkTokens> encode_chunks(std::span<const Matrix> patches, std::int64_t first_chunk,
                                       const ModelWeights& weights, const ModelConfig& cfg) {
  const ChunkConfig cc = cfg.chunk();
  const AttentionBlockConfig sb = cfg.spatial_block();
  std::vector<ChunkTokens> out;
  out.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const ChunkTokens embedded =
        embed_patches(patches[i], first_chunk + static_cast<std::int64_t>(i), cc, weights.embedding);
    out.push_back(spatial_encode(embedded, weights.spatial, sb));
  }
  return out;
}

Tensor window_loss(const Tensor& logits, const Matrix& labels) {
  return cross_entropy_sum(logits, labels);
}

WindowForward forward_window(const ModelWeights& weights, const ModelConfig& cfg, const TrainingWindow& window,
                             const std::vector<ChunkTokens>* frozen_long) {
  if (window.t_short < 1 || window.t_long() < 0) throw ContractError("forward_window: window shorter than T_S");
  WindowForward f;
  const std::span<const Matrix> all(window.patches);
  const Index t_long = window.t_long();
  if (frozen_long) {
    if (static_cast<Index>(frozen_long->size()) != t_long) {
      throw ShapeError("forward_window: frozen long features cover " + std::to_string(frozen_long->size()) +
                       " chunks, window has " + std::to_string(t_long));
    }
    f.long_encoded = *frozen_long;
  } else {
    f.long_encoded = encode_chunks(all.first(static_cast<std::size_t>(t_long)), window.first_chunk, weights, cfg);
  }
  f.short_encoded = encode_chunks(all.subspan(static_cast<std::size_t>(t_long)), window.first_chunk + t_long,
                                  weights, cfg);

  const bool use_long = cfg.streams.t_long > 0 && t_long > 0;
  if (use_long) f.memory = long_term_compress(f.long_encoded, weights, cfg);
  const ShortTermResult r = short_term_forward(f.short_encoded, use_long ? &f.memory : nullptr, weights, cfg);
  f.logits = r.logits;
  f.loss = window_loss(r.logits, window.labels);
  return f;
}

Trainer::Trainer(const ModelConfig& cfg, ModelWeights weights, TrainConfig train_cfg)
    : cfg_(cfg), weights_(std::move(weights)), train_cfg_(std::move(train_cfg)) {
  train_cfg_.validate();
  cfg_.streams.t_long = train_cfg_.train_t_long;
  cfg_.validate();
  validate_weights(cfg_, weights_);
  for (const auto& [name, p] : weights_.parameters()) velocity_.push_back(Matrix::Zero(p.rows(), p.cols()));
}

double Trainer::train_step(std::span<const TrainingWindow> batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  weights_.zero_grad();
  std::vector<Tensor> losses;
  for (const auto& w : batch) losses.push_back(forward_window(weights_, cfg_, w).loss);
  const Tensor total = scale(sum(concat_rows(losses)), 1.0 / static_cast<double>(batch.size()));
  const double loss = total.item();
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "train_step " << steps_ << ": non-finite loss " << loss << " over " << batch.size() << " windows";
    for (std::size_t i = 0; i < losses.size(); ++i) msg << (i ? ", " : " [") << losses[i].item();
    msg << "]";
    throw TrainingError(msg.str());
  }
  total.backward();

  const auto& params = weights_.parameters();
  double clip_scale = 1.0;
  if (train_cfg_.grad_clip > 0) {
    double sq = 0.0;
    for (const auto& [name, p] : params) sq += p.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > train_cfg_.grad_clip) clip_scale = train_cfg_.grad_clip / norm;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    velocity_[i] = train_cfg_.momentum * velocity_[i] + clip_scale * p.grad();
    p.mutable_leaf_value() -= train_cfg_.learning_rate * velocity_[i];
  }
  weights_.zero_grad();
  ++steps_;
  return loss;
}

StreamEvaluation evaluate_stream(const ModelWeights& weights, const ModelConfig& cfg,
                                 const EngineOptions& options, const SyntheticStream& stream) {
  auto shared = std::make_shared<const ModelWeights>(weights);
  Engine engine(cfg, shared, options);
  StreamEvaluation e;
  e.probabilities.resize(stream.chunk_count(), cfg.streams.num_classes);
  for (Index i = 0; i < stream.chunk_count(); ++i) {
    e.probabilities.row(i) = engine.step(stream.chunk(i)).probabilities;
  }
  e.report = evaluate_predictions(e.probabilities, stream.labels);
  return e;
}

std::vector<LengthResult> evaluate_lengths(const ModelWeights& weights, const ModelConfig& cfg,
                                           const SyntheticStream& stream, std::span<const Index> t_long_list,
                                           const EngineOptions& options) {
  std::vector<LengthResult> out;
  for (Index t_long : t_long_list) {
    ModelConfig c = cfg;
    c.streams.t_long = t_long;
    const StreamEvaluation e = evaluate_stream(weights, c, options, stream);
    out.push_back({t_long, e.report.accuracy, e.report.map});
  }
  return out;
}

TrainingRun run_training(Trainer& trainer, const SyntheticStream& train_stream,
                         const SyntheticStream* validation,
                         const std::function<void(const EpochReport&, const ModelWeights&)>& on_epoch) {
  const ModelConfig& cfg = trainer.config();
  const TrainConfig& tc = trainer.train_config();
  const Index first_end = cfg.streams.t_short + cfg.streams.t_long - 1;
  if (first_end >= train_stream.chunk_count()) {
    throw ConfigError("training stream of " + std::to_string(train_stream.chunk_count()) +
                      " chunks is shorter than one T_S + T_L window");
  }
  const auto span = static_cast<std::uint64_t>(train_stream.chunk_count() - first_end);

  Rng rng(tc.seed ^ 0x5851F42D4C957F2DULL);
  TrainingRun run;
  for (Index epoch = 0; epoch < tc.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (Index s = 0; s < tc.steps_per_epoch; ++s) {
      std::vector<TrainingWindow> batch;
      for (Index b = 0; b < tc.batch_size; ++b) {
        batch.push_back(make_window(train_stream, first_end + static_cast<Index>(rng.below(span)), cfg));
      }
      const double loss = trainer.train_step(batch);
      run.losses.push_back(loss);
      epoch_loss += loss;
    }
    EpochReport report;
    report.epoch = epoch + 1;
    report.mean_loss = epoch_loss / static_cast<double>(tc.steps_per_epoch);
    if (validation) {
      EngineOptions opts;
      opts.mode = InferenceMode::kRegular;
      opts.long_branch = cfg.streams.t_long > 0;
      const StreamEvaluation e = evaluate_stream(trainer.weights(), cfg, opts, *validation);
      report.validation_accuracy = e.report.accuracy;
      report.validation_map = e.report.map;
    }
    run.epochs.push_back(report);
    if (on_epoch) on_epoch(report, trainer.weights());
  }
  return run;
}

}  // namespace e2eload
