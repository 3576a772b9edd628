#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "e2eload/inference.hpp"
#include "e2eload/synthetic.hpp"
#include "e2eload/training.hpp"

namespace e2eload {

/// Everything a CLI run can be configured with.
struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  SynthTaskConfig task;
  std::uint64_t seed = 0;

  Preset preset = Preset::kFull;
  std::optional<InferenceMode> mode;  // overrides the preset's mode
  Index lc_refresh_interval = 1;

  std::vector<InferenceMode> bench_modes{InferenceMode::kRegular, InferenceMode::kEfficient};
  std::vector<Index> bench_t_short{8, 16, 32};
  Index bench_stream_chunks = 0;  // 0: 4 * T_S per sweep point
  Index bench_warmup_chunks = 0;  // 0: T_S

  Index validation_chunks = 400;

  /// Preset options with the mode override and refresh interval applied.
  EngineOptions engine_options() const;
};

/// Parses `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones. Throws ConfigError naming `source` and the line number for
/// unknown keys and malformed values. Task class count follows model.num_classes.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>",
                       RunConfig base = RunConfig{});

RunConfig load_config(const std::filesystem::path& path, RunConfig base = RunConfig{});

/// Every recognized key, in documentation order.
std::vector<std::string> config_keys();

}  // namespace e2eload
