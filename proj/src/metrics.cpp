#include "e2eload/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

namespace e2eload {
namespace {

std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void check_sizes(std::span<const double> scores, std::span<const bool> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("metric: " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.size()) + " labels");
  }
}

double ranked_ap(std::span<const double> scores, std::span<const bool> labels, double w) {
  double tp = 0.0, fp = 0.0, total = 0.0;
  for (std::size_t idx : ranking(scores)) {
    if (labels[idx]) {
      tp += 1.0;
      total += tp / (tp + fp / w);
    } else {
      fp += 1.0;
    }
  }
  return total / tp;
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const bool> labels) {
  check_sizes(scores, labels);
  if (std::count(labels.begin(), labels.end(), true) == 0) {
    throw MetricError("average_precision: no positive labels");
  }
  return ranked_ap(scores, labels, 1.0);
}

double calibrated_ap(std::span<const double> scores, std::span<const bool> labels) {
  check_sizes(scores, labels);
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), true));
  const double negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0) throw MetricError("calibrated_ap: no positive labels");
  if (negatives == 0) throw MetricError("calibrated_ap: no negative labels");
  return ranked_ap(scores, labels, negatives / positives);
}

ClassificationReport evaluate_predictions(const Matrix& probabilities, std::span<const Index> labels) {
  if (probabilities.rows() != static_cast<Index>(labels.size())) {
    throw ShapeError("evaluate_predictions: one probability row per label required");
  }
  ClassificationReport r;
  const Index classes = probabilities.cols();
  r.class_ap.assign(static_cast<std::size_t>(classes), std::numeric_limits<double>::quiet_NaN());
  double ap_sum = 0.0, cap_sum = 0.0;
  int ap_count = 0, cap_count = 0;
  for (Index c = 1; c < classes; ++c) {
    std::vector<double> scores(labels.size());
    std::vector<char> raw(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities(static_cast<Index>(i), c);
      raw[i] = labels[i] == c;
    }
    std::unique_ptr<bool[]> flags(new bool[labels.size()]);
    for (std::size_t i = 0; i < labels.size(); ++i) flags[i] = raw[i] != 0;
    const std::span<const bool> positive(flags.get(), labels.size());
    const auto npos = std::count(raw.begin(), raw.end(), 1);
    if (npos == 0) continue;
    const double ap = average_precision(scores, positive);
    r.class_ap[static_cast<std::size_t>(c)] = ap;
    ap_sum += ap;
    ++ap_count;
    if (npos < static_cast<long>(labels.size())) {
      cap_sum += calibrated_ap(scores, positive);
      ++cap_count;
    }
  }
  r.map = ap_count ? ap_sum / ap_count : std::numeric_limits<double>::quiet_NaN();
  r.mcap = cap_count ? cap_sum / cap_count : std::numeric_limits<double>::quiet_NaN();
  Index correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Index best = 0;
    probabilities.row(static_cast<Index>(i)).maxCoeff(&best);
    correct += best == labels[i];
  }
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  return r;
}

LatencyStats latency_stats(std::span<const std::int64_t> latencies_ns) {
  LatencyStats s;
  s.samples = latencies_ns.size();
  if (latencies_ns.empty()) return s;
  std::vector<std::int64_t> sorted(latencies_ns.begin(), latencies_ns.end());
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  s.mean_ns = total / static_cast<double>(sorted.size());
  const auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return static_cast<double>(sorted[std::clamp<std::size_t>(k, 1, sorted.size()) - 1]);
  };
  s.p50_ns = rank(0.50);
  s.p95_ns = rank(0.95);
  s.steps_per_second = s.mean_ns > 0 ? 1e9 / s.mean_ns : 0.0;
  return s;
}

}  // namespace e2eload
