#include "e2eload/stream_buffer.hpp"

#include <algorithm>
#include <string>

namespace e2eload {

ChunkTokens spatial_encode(const ChunkTokens& chunk, std::span<const AttentionBlockWeights> blocks,
                           const AttentionBlockConfig& cfg) {
  Tensor x = chunk.tokens;
  for (const auto& block : blocks) x = attention_block(x, x, block, cfg, nullptr);
  return {chunk.chunk_index, x};
}

StreamBuffer::StreamBuffer(Index capacity) {
  if (capacity < 1) throw ContractError("StreamBuffer: capacity must be positive");
  slots_.resize(static_cast<std::size_t>(capacity));
}

std::int64_t StreamBuffer::newest_index() const {
  if (empty()) throw ContractError("StreamBuffer: empty buffer has no newest entry");
  return at(size_ - 1).chunk_index;
}

std::int64_t StreamBuffer::oldest_index() const {
  if (empty()) throw ContractError("StreamBuffer: empty buffer has no oldest entry");
  return at(0).chunk_index;
}

const ChunkTokens& StreamBuffer::at(Index i) const {
  if (i < 0 || i >= size_) throw ShapeError("StreamBuffer: entry " + std::to_string(i) + " out of range");
  return *slots_[static_cast<std::size_t>((head_ + i) % capacity())];
}

void StreamBuffer::push(ChunkTokens encoded) {
  if (!empty() && encoded.chunk_index != newest_index() + 1) {
    throw OrderingError("StreamBuffer: expected chunk " + std::to_string(newest_index() + 1) +
                        ", got " + std::to_string(encoded.chunk_index));
  }
  if (size_ == capacity()) {
    slots_[static_cast<std::size_t>(head_)] = std::move(encoded);
    head_ = (head_ + 1) % capacity();
    return;
  }
  slots_[static_cast<std::size_t>((head_ + size_) % capacity())] = std::move(encoded);
  ++size_;
}

std::vector<ChunkTokens> StreamBuffer::window_short(Index t_short) const {
  const Index n = std::min(t_short, size_);
  std::vector<ChunkTokens> out;
  for (Index i = size_ - n; i < size_; ++i) out.push_back(at(i));
  return out;
}

std::vector<ChunkTokens> StreamBuffer::window_long(Index t_short, Index t_long) const {
  const Index older = std::max<Index>(0, size_ - t_short);
  const Index n = std::min(t_long, older);
  std::vector<ChunkTokens> out;
  for (Index i = older - n; i < older; ++i) out.push_back(at(i));
  return out;
}

}  // namespace e2eload
