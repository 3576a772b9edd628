#include "e2eload/synthetic.hpp"

#include <algorithm>
#include <string>

#include "e2eload/rng.hpp"

namespace e2eload {

void SynthTaskConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic task: num_classes must be >= 2");
  if (cue_distance_chunks < 0) throw ConfigError("synthetic task: cue distance must be >= 0");
  if (action_len_chunks < 1) throw ConfigError("synthetic task: action length must be >= 1");
  if (slot_slack < 1) throw ConfigError("synthetic task: slot_slack must be >= 1");
  if (cue_patches < 1) throw ConfigError("synthetic task: cue_patches must be >= 1");
  if (noise_std < 0) throw ConfigError("synthetic task: noise_std must be >= 0");
  if (event_rate < 0 || event_rate > 1) throw ConfigError("synthetic task: event_rate must lie in [0, 1]");
  if (stream_len_chunks < slot_length()) {
    throw ConfigError("synthetic task: stream of " + std::to_string(stream_len_chunks) +
                      " chunks is too short for one event slot of " + std::to_string(slot_length()));
  }
}

std::array<double, 3> cue_color(Index cls) {
  static constexpr std::array<std::array<double, 3>, 6> kPalette{{
      {1.0, 0.0, 0.0},
      {0.0, 1.0, 0.0},
      {0.0, 0.0, 1.0},
      {1.0, 1.0, 0.0},
      {1.0, 0.0, 1.0},
      {0.0, 1.0, 1.0},
  }};
  if (cls < 1) throw ContractError("cue_color: background has no cue");
  const auto base = kPalette[static_cast<std::size_t>((cls - 1) % 6)];
  const double level = 1.0 / static_cast<double>(1 + (cls - 1) / 6);
  return {base[0] * level, base[1] * level, base[2] * level};
}

Matrix SyntheticStream::one_hot(Index first, Index count, Index num_classes) const {
  Matrix m = Matrix::Zero(count, num_classes);
  for (Index i = 0; i < count; ++i) m(i, labels[static_cast<std::size_t>(first + i)]) = 1.0;
  return m;
}

SyntheticStream generate_stream(const SynthTaskConfig& cfg, const ChunkConfig& geometry) {
  cfg.validate();
  if (cfg.cue_patches > geometry.n_h() || cfg.cue_patches > geometry.n_w()) {
    throw ConfigError("synthetic task: cue of " + std::to_string(cfg.cue_patches) +
                      " patch slots does not fit the " + std::to_string(geometry.n_h()) + "x" +
                      std::to_string(geometry.n_w()) + " slot grid");
  }
  Rng rng(cfg.seed);
  SyntheticStream s;
  s.tau = geometry.tau;
  s.labels.assign(static_cast<std::size_t>(cfg.stream_len_chunks), 0);
  s.frames = Frames(cfg.stream_len_chunks * geometry.tau, geometry.frame_height, geometry.frame_width,
                    kBackgroundLevel);

  const Index slots = cfg.stream_len_chunks / cfg.slot_length();
  for (Index slot = 0; slot < slots; ++slot) {
    const bool has_event = rng.uniform() < cfg.event_rate;
    const auto cls = static_cast<Index>(1 + rng.below(static_cast<std::uint64_t>(cfg.num_classes - 1)));
    const auto offset = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cfg.slot_slack)));
    const auto py = static_cast<Index>(rng.below(static_cast<std::uint64_t>(geometry.n_h() - cfg.cue_patches + 1)));
    const auto px = static_cast<Index>(rng.below(static_cast<std::uint64_t>(geometry.n_w() - cfg.cue_patches + 1)));
    if (!has_event) continue;

    const Index cue = slot * cfg.slot_length() + offset;
    s.cue_chunks.push_back(cue);
    s.cue_classes.push_back(cls);
    for (Index i = cue + cfg.cue_distance_chunks;
         i < cue + cfg.cue_distance_chunks + cfg.action_len_chunks; ++i) {
      s.labels[static_cast<std::size_t>(i)] = cls;
    }
    const auto color = cue_color(cls);
    for (Index f = cue * geometry.tau; f < (cue + 1) * geometry.tau; ++f)
      for (Index y = py * geometry.patch_h; y < (py + cfg.cue_patches) * geometry.patch_h; ++y)
        for (Index x = px * geometry.patch_w; x < (px + cfg.cue_patches) * geometry.patch_w; ++x)
          for (Index c = 0; c < 3; ++c) s.frames.at(f, y, x, c) = color[static_cast<std::size_t>(c)];
  }

  if (cfg.noise_std > 0) {
    for (double& p : s.frames.pixels) p = std::clamp(p + cfg.noise_std * rng.normal(), 0.0, 1.0);
  }
  return s;
}

}  // namespace e2eload
