#include "e2eload/formats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <set>

namespace e2eload {
namespace {

constexpr char kRsvMagic[4] = {'R', 'S', 'V', '1'};
constexpr char kCheckpointMagic[4] = {'E', '2', 'E', 'W'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

/// Bounds-checked little-endian reader; errors carry the offending offset.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void need(std::size_t n, const std::string& field) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string(what_) + ": truncated " + field + " at byte offset " +
                        std::to_string(bytes_.size()) + " (needed " + std::to_string(n) + " bytes from offset " +
                        std::to_string(pos_) + ")");
    }
  }
  std::uint8_t u8(const std::string& field) {
    need(1, field);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const std::string& field) {
    need(2, field);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const std::string& field) {
    need(n, field);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] void fail(const std::string& message, std::size_t at) const {
    throw FormatError(std::string(what_) + ": " + message + " at byte offset " + std::to_string(at));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_rsv(const Frames& frames) {
  std::vector<std::uint8_t> out(kRsvMagic, kRsvMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(frames.width));
  put_u32(out, static_cast<std::uint32_t>(frames.height));
  put_u32(out, static_cast<std::uint32_t>(Frames::kChannels));
  put_u32(out, static_cast<std::uint32_t>(frames.count));
  out.reserve(out.size() + frames.pixels.size());
  for (double p : frames.pixels) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
  }
  return out;
}

Frames decode_rsv(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "rsv");
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kRsvMagic, 4) != 0) r.fail("bad magic", 0);
  const std::uint32_t width = r.u32("width");
  const std::uint32_t height = r.u32("height");
  const std::size_t channels_at = r.offset();
  const std::uint32_t channels = r.u32("channels");
  const std::uint32_t count = r.u32("frame_count");
  if (channels != 3) r.fail("channels must be 3, found " + std::to_string(channels), channels_at);
  const std::uint64_t n = std::uint64_t{width} * height * channels * count;
  const auto payload = r.take(static_cast<std::size_t>(n), "pixel payload");
  if (!r.at_end()) r.fail("trailing bytes after pixel payload", r.offset());
  Frames f;
  f.count = count;
  f.height = height;
  f.width = width;
  f.pixels.resize(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) f.pixels[i] = payload[i] / 255.0;
  return f;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

void write_rsv(const std::filesystem::path& path, const Frames& frames) { write_file(path, encode_rsv(frames)); }

Frames read_rsv(const std::filesystem::path& path) { return decode_rsv(read_file(path)); }

std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointTensor> tensors) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("checkpoint: tensor name too long: " + t.name.substr(0, 32));
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.extents.size()));
    for (std::uint32_t e : t.extents) put_u32(out, e);
    for (float v : t.values) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

std::vector<CheckpointTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "checkpoint");
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) r.fail("bad magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unknown version " + std::to_string(version), 4);
  const std::uint32_t count = r.u32("tensor count");
  std::vector<CheckpointTensor> out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    CheckpointTensor t;
    const std::uint16_t len = r.u16("name length");
    const auto name = r.take(len, "name");
    t.name.assign(name.begin(), name.end());
    if (!seen.insert(t.name).second) r.fail("duplicate tensor name '" + t.name + "'", start);
    const std::uint8_t rank = r.u8("rank");
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.extents.push_back(r.u32("extent"));
      n *= t.extents.back();
    }
    r.need(static_cast<std::size_t>(n * 4), "values of '" + t.name + "'");
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& v : t.values) {
      const std::uint32_t bits = r.u32("value");
      std::memcpy(&v, &bits, 4);
    }
    out.push_back(std::move(t));
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor", r.offset());
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights) {
  std::vector<CheckpointTensor> tensors;
  for (const auto& [name, p] : weights.parameters()) {
    CheckpointTensor t;
    t.name = name;
    for (Index e : p.shape()) t.extents.push_back(static_cast<std::uint32_t>(e));
    const Matrix& v = p.value();
    t.values.reserve(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.rows(); ++i)
      for (Index j = 0; j < v.cols(); ++j) t.values.push_back(static_cast<float>(v(i, j)));
    tensors.push_back(std::move(t));
  }
  write_file(path, encode_checkpoint(tensors));
}

ModelWeights load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  const auto tensors = decode_checkpoint(read_file(path));
  ModelWeights weights = ModelWeights::initialize(cfg, 0);
  const auto& params = weights.parameters();
  if (tensors.size() != params.size()) {
    throw FormatError("checkpoint '" + path.string() + "' holds " + std::to_string(tensors.size()) +
                      " tensors, the configured model has " + std::to_string(params.size()));
  }
  for (const auto& t : tensors) {
    const Tensor* p = weights.find(t.name);
    if (!p) throw FormatError("checkpoint tensor '" + t.name + "' is not a parameter of the configured model");
    std::vector<std::uint32_t> want;
    for (Index e : p->shape()) want.push_back(static_cast<std::uint32_t>(e));
    if (want != t.extents) {
      std::string have_s, want_s;
      for (auto e : t.extents) have_s += (have_s.empty() ? "" : "x") + std::to_string(e);
      for (auto e : want) want_s += (want_s.empty() ? "" : "x") + std::to_string(e);
      throw FormatError("checkpoint tensor '" + t.name + "' has shape [" + have_s + "], model expects [" +
                        want_s + "]");
    }
    Tensor target = *p;
    Matrix& v = target.mutable_leaf_value();
    std::size_t k = 0;
    for (Index i = 0; i < v.rows(); ++i)
      for (Index j = 0; j < v.cols(); ++j) v(i, j) = static_cast<double>(t.values[k++]);
  }
  return weights;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_prediction_csv(std::ostream& out, std::span<const StepOutput> steps, Index num_classes) {
  out << "chunk_index";
  for (Index c = 0; c < num_classes; ++c) out << ",p" << c;
  out << '\n';
  for (const auto& s : steps) {
    out << s.chunk_index;
    for (Index c = 0; c < s.probabilities.size(); ++c) out << ',' << format_double(s.probabilities(c));
    out << '\n';
  }
}

void write_attention_csv(std::ostream& out, const StepOutput& step) {
  out << "layer,query_token,key_token,weight\n";
  for (const auto& layer : step.attention_dump) {
    for (Index q = 0; q < layer.weights.rows(); ++q)
      for (Index k = 0; k < layer.weights.cols(); ++k)
        out << layer.layer << ',' << q << ',' << k << ',' << format_double(layer.weights(q, k)) << '\n';
  }
}

void write_metric_csv(std::ostream& out, const ClassificationReport& report, const LatencyStats& latency) {
  out << "metric,value\n";
  for (std::size_t c = 1; c < report.class_ap.size(); ++c) {
    out << "ap_class_" << c << ',' << format_double(report.class_ap[c]) << '\n';
  }
  out << "map," << format_double(report.map) << '\n';
  out << "mcap," << format_double(report.mcap) << '\n';
  out << "accuracy," << format_double(report.accuracy) << '\n';
  out << "latency_mean_ns," << format_double(latency.mean_ns) << '\n';
  out << "latency_p50_ns," << format_double(latency.p50_ns) << '\n';
  out << "latency_p95_ns," << format_double(latency.p95_ns) << '\n';
  out << "steps_per_sec," << format_double(latency.steps_per_second) << '\n';
}

}  // namespace e2eload
