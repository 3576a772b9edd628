#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "e2eload/inference.hpp"
#include "e2eload/metrics.hpp"
#include "e2eload/synthetic.hpp"

namespace e2eload {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  Index epochs = 1;
  Index batch_size = 4;        // independent windows per step
  Index steps_per_epoch = 50;
  Index train_t_long = 16;
  std::vector<Index> eval_t_long_list{16, 32};
  double grad_clip = 0.0;      // global-norm clip; 0 disables
  std::uint64_t seed = 0;      // window sampling and weight initialization

  void validate() const;
};

/// T_L + T_S consecutive chunks and the labels of the T_S newest ones.
struct TrainingWindow {
  std::vector<Matrix> patches;  // per-chunk patch matrices, oldest first
  std::int64_t first_chunk = 0;
  Index t_short = 0;
  Matrix labels;                // t_short x C one-hot

  Index t_long() const { return static_cast<Index>(patches.size()) - t_short; }
};

/// The window ending at `last_chunk`. Chunks before the stream start are
/// dropped from the long part, so early windows carry a shorter history.
TrainingWindow make_window(const SyntheticStream& stream, Index last_chunk, const ModelConfig& cfg);

/// Embeds and spatially encodes consecutive chunks with gradient tracking.
std::vector<ChunkTokens> encode_chunks(std::span<const Matrix> patches, std::int64_t first_chunk,
                                       const ModelWeights& weights, const ModelConfig& cfg);

/// Sum over chunks of -log softmax probability of the true class.
/// Throws ContractError unless labels are one-hot with one row per logit row.
Tensor window_loss(const Tensor& logits, const Matrix& labels);

struct WindowForward {
  Tensor loss;
  Tensor logits;
  CompressedMemory memory;
  std::vector<ChunkTokens> long_encoded;
  std::vector<ChunkTokens> short_encoded;
};

/// Regular-mode forward over one window. When `frozen_long` is given it
/// replaces the encoding of the long part (used to hold the detached
/// features fixed under finite differences).
WindowForward forward_window(const ModelWeights& weights, const ModelConfig& cfg, const TrainingWindow& window,
                             const std::vector<ChunkTokens>* frozen_long = nullptr);

/// SGD with momentum on a model whose long window is train_t_long.
class Trainer {
 public:
  Trainer(const ModelConfig& cfg, ModelWeights weights, TrainConfig train_cfg);

  /// One optimization step over a batch. Returns the pre-update loss
  /// averaged over windows. Throws TrainingError on a non-finite loss.
  double train_step(std::span<const TrainingWindow> batch);

  const ModelConfig& config() const { return cfg_; }
  const TrainConfig& train_config() const { return train_cfg_; }
  const ModelWeights& weights() const { return weights_; }
  Index steps() const { return steps_; }

 private:
  ModelConfig cfg_;
  ModelWeights weights_;
  TrainConfig train_cfg_;
  std::vector<Matrix> velocity_;
  Index steps_ = 0;
};

struct StreamEvaluation {
  Matrix probabilities;  // one row per chunk
  ClassificationReport report;
};

/// Streams every chunk through a fresh engine and scores all chunks.
StreamEvaluation evaluate_stream(const ModelWeights& weights, const ModelConfig& cfg,
                                 const EngineOptions& options, const SyntheticStream& stream);

struct LengthResult {
  Index t_long = 0;
  double accuracy = 0.0;
  double map = 0.0;
};

/// Re-evaluates unchanged weights with each long-window length.
std::vector<LengthResult> evaluate_lengths(const ModelWeights& weights, const ModelConfig& cfg,
                                           const SyntheticStream& stream, std::span<const Index> t_long_list,
                                           const EngineOptions& options);

struct EpochReport {
  Index epoch = 0;
  double mean_loss = 0.0;
  double validation_accuracy = 0.0;
  double validation_map = 0.0;
};

struct TrainingRun {
  std::vector<double> losses;  // one per step
  std::vector<EpochReport> epochs;
};

/// Samples batches of full windows uniformly from `train_stream`. After
/// each epoch, evaluates `validation` (if given) in regular mode at
/// train_t_long and calls `on_epoch`.
TrainingRun run_training(Trainer& trainer, const SyntheticStream& train_stream,
                         const SyntheticStream* validation,
                         const std::function<void(const EpochReport&, const ModelWeights&)>& on_epoch = {});

}  // namespace e2eload
