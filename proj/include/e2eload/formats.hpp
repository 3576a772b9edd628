#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "e2eload/inference.hpp"
#include "e2eload/metrics.hpp"

namespace e2eload {

// RSV: "RSV1", u32 LE width, height, channels (3), frame_count, then
// uint8 pixels frame-major, row-major, channel-interleaved.
inline constexpr std::size_t kRsvHeaderBytes = 20;

/// Pixels are quantized by round(clamp(p, 0, 1) * 255).
std::vector<std::uint8_t> encode_rsv(const Frames& frames);
/// Pixels are normalized by / 255. Throws FormatError naming the byte offset.
Frames decode_rsv(std::span<const std::uint8_t> bytes);

void write_rsv(const std::filesystem::path& path, const Frames& frames);
Frames read_rsv(const std::filesystem::path& path);

// Checkpoint: "E2EW", u32 version, u32 count; per tensor u16 name length,
// name, u8 rank, u32 extents, f32 values row-major. All little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointTensor> tensors);
/// Throws FormatError on bad magic, unknown version, truncation or a repeated name.
std::vector<CheckpointTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights);
/// Loads into a model built for `cfg`. Throws FormatError on name or shape mismatch.
ModelWeights load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// chunk_index, p0 .. p{C-1}
void write_prediction_csv(std::ostream& out, std::span<const StepOutput> steps, Index num_classes);
/// layer, query_token, key_token, weight for one step's captured attention.
/// query_token indexes the newest chunk's tokens, key_token the layer's key sequence.
void write_attention_csv(std::ostream& out, const StepOutput& step);
/// metric, value rows: per-class AP, mAP, mcAP, accuracy, latency statistics.
void write_metric_csv(std::ostream& out, const ClassificationReport& report, const LatencyStats& latency);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace e2eload
