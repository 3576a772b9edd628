#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "e2eload/attention.hpp"
#include "e2eload/chunking.hpp"

namespace e2eload {

/// Runs the spatial attention stack over one chunk's own tokens.
ChunkTokens spatial_encode(const ChunkTokens& chunk, std::span<const AttentionBlockWeights> blocks,
                           const AttentionBlockConfig& cfg);

/// Fixed-capacity ring of spatially encoded chunks with consecutive absolute
/// indices ending at newest_index().
class StreamBuffer {
 public:
  explicit StreamBuffer(Index capacity);

  /// Appends the next chunk, evicting the oldest one at capacity.
  /// Throws OrderingError unless encoded.chunk_index == newest_index() + 1
  /// (any index is accepted by an empty buffer).
  void push(ChunkTokens encoded);

  Index capacity() const { return static_cast<Index>(slots_.size()); }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::int64_t newest_index() const;
  std::int64_t oldest_index() const;

  /// Entry i counted from the oldest.
  const ChunkTokens& at(Index i) const;

  /// The min(t_short, size) newest entries, oldest first.
  std::vector<ChunkTokens> window_short(Index t_short) const;
  /// Up to t_long entries immediately older than the short window, oldest first.
  std::vector<ChunkTokens> window_long(Index t_short, Index t_long) const;

 private:
  std::vector<std::optional<ChunkTokens>> slots_;
  Index head_ = 0;  // slot of the oldest entry
  Index size_ = 0;
};

}  // namespace e2eload
