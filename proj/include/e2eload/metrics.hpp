#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "e2eload/kernels.hpp"

namespace e2eload {

/// Per-frame average precision: scores ranked descending (ties by earlier
/// index), AP = mean over positives of precision at their rank.
/// Throws MetricError without positives.
double average_precision(std::span<const double> scores, std::span<const bool> labels);

/// Calibrated AP with precision TP / (TP + FP / w), w = negatives / positives.
/// Throws MetricError without positives or without negatives.
double calibrated_ap(std::span<const double> scores, std::span<const bool> labels);

struct ClassificationReport {
  std::vector<double> class_ap;  // NaN for classes without positives (and for background)
  double map = 0.0;              // mean over non-background classes with positives
  double mcap = 0.0;             // same, calibrated
  double accuracy = 0.0;         // argmax == label over all chunks
};

/// probabilities: one row per chunk; labels: class per chunk; class 0 is background.
ClassificationReport evaluate_predictions(const Matrix& probabilities, std::span<const Index> labels);

struct LatencyStats {
  double mean_ns = 0.0;
  double p50_ns = 0.0;
  double p95_ns = 0.0;
  double steps_per_second = 0.0;
  std::size_t samples = 0;
};

/// Nearest-rank percentiles over the given samples.
LatencyStats latency_stats(std::span<const std::int64_t> latencies_ns);

}  // namespace e2eload
