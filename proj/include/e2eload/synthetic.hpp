#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "e2eload/chunking.hpp"

namespace e2eload {

/// Synthetic streaming task: a class-coloured square (the cue) appears in
/// one chunk, and the action it announces is labelled `cue_distance_chunks`
/// later for `action_len_chunks` chunks. Events live in fixed slots of
/// length d + k + slot_slack so they never overlap.
struct SynthTaskConfig {
  Index num_classes = 3;  // class 0 is background
  Index cue_distance_chunks = 1;
  Index action_len_chunks = 4;
  double noise_std = 0.05;
  Index stream_len_chunks = 200;
  std::uint64_t seed = 0;
  double event_rate = 0.8;  // probability that a slot holds an event
  Index slot_slack = 4;     // cue offset within a slot is uniform in [0, slot_slack)
  Index cue_patches = 1;    // side of the cue square in patch slots

  Index slot_length() const { return cue_distance_chunks + action_len_chunks + slot_slack; }
  void validate() const;
};

struct SyntheticStream {
  Frames frames;  // stream_len_chunks * tau frames
  Index tau = 0;
  std::vector<Index> labels;       // class per chunk
  std::vector<Index> cue_chunks;   // chunk index of every event's cue
  std::vector<Index> cue_classes;  // class of every event

  Index chunk_count() const { return static_cast<Index>(labels.size()); }
  Frames chunk(Index i) const { return frames.slice(i * tau, tau); }
  /// labels as one-hot rows over `num_classes`.
  Matrix one_hot(Index first, Index count, Index num_classes) const;
};

/// Background grey level of every synthetic frame.
inline constexpr double kBackgroundLevel = 0.5;

/// RGB colour of the cue for action class `cls` (>= 1).
std::array<double, 3> cue_color(Index cls);

/// Deterministic in cfg.seed. Throws ConfigError when no event slot fits.
SyntheticStream generate_stream(const SynthTaskConfig& cfg, const ChunkConfig& geometry);

}  // namespace e2eload
