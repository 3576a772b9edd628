#include "e2eload/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace e2eload {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

struct BadValue {
  std::string message;
};

Index parse_index(const std::string& v) {
  Index out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw BadValue{"expected an integer, got '" + v + "'"};
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw BadValue{"expected an unsigned integer, got '" + v + "'"};
  }
  return out;
}

double parse_real(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw BadValue{"expected a number, got '" + v + "'"};
  }
  if (used != v.size()) throw BadValue{"expected a number, got '" + v + "'"};
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw BadValue{"empty item in list '" + v + "'"};
    out.push_back(item);
  }
  return out;
}

std::vector<Index> parse_index_list(const std::string& v) {
  std::vector<Index> out;
  for (const auto& s : split_list(v)) out.push_back(parse_index(s));
  return out;
}

FusionOp parse_fusion(const std::string& v) {
  if (v == "ca" || v == "cross") return FusionOp::kCrossAttention;
  if (v == "sa" || v == "self") return FusionOp::kSelfAttention;
  throw BadValue{"expected ca or sa, got '" + v + "'"};
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
      {"model.tau", [](RunConfig& c, const std::string& v) { c.model.tau = parse_index(v); }},
      {"model.t_sample", [](RunConfig& c, const std::string& v) { c.model.t_sample = parse_index(v); }},
      {"model.frame_height", [](RunConfig& c, const std::string& v) { c.model.frame_height = parse_index(v); }},
      {"model.frame_width", [](RunConfig& c, const std::string& v) { c.model.frame_width = parse_index(v); }},
      {"model.patch_h", [](RunConfig& c, const std::string& v) { c.model.patch_h = parse_index(v); }},
      {"model.patch_w", [](RunConfig& c, const std::string& v) { c.model.patch_w = parse_index(v); }},
      {"model.d_model", [](RunConfig& c, const std::string& v) { c.model.d_model = parse_index(v); }},
      {"model.mlp_ratio", [](RunConfig& c, const std::string& v) { c.model.mlp_ratio = parse_index(v); }},
      {"model.l_sb", [](RunConfig& c, const std::string& v) { c.model.l_sb = parse_index(v); }},
      {"model.l_sm", [](RunConfig& c, const std::string& v) { c.model.streams.l_sm = parse_index(v); }},
      {"model.l_lc", [](RunConfig& c, const std::string& v) { c.model.streams.l_lc = parse_index(v); }},
      {"model.t_short", [](RunConfig& c, const std::string& v) { c.model.streams.t_short = parse_index(v); }},
      {"model.t_long", [](RunConfig& c, const std::string& v) { c.model.streams.t_long = parse_index(v); }},
      {"model.fusion_op", [](RunConfig& c, const std::string& v) { c.model.streams.fusion_op = parse_fusion(v); }},
      {"model.fusion_layer",
       [](RunConfig& c, const std::string& v) { c.model.streams.fusion_layer = parse_index(v); }},
      {"model.lc_temporal_factors",
       [](RunConfig& c, const std::string& v) { c.model.streams.lc_temporal_factors = parse_index_list(v); }},
      {"model.lc_spatial_factor",
       [](RunConfig& c, const std::string& v) { c.model.streams.lc_spatial_factor = parse_index(v); }},
      {"model.num_classes",
       [](RunConfig& c, const std::string& v) { c.model.streams.num_classes = parse_index(v); }},
      {"train.learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_real(v); }},
      {"train.momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = parse_real(v); }},
      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_index(v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_index(v); }},
      {"train.steps_per_epoch",
       [](RunConfig& c, const std::string& v) { c.train.steps_per_epoch = parse_index(v); }},
      {"train.t_long", [](RunConfig& c, const std::string& v) { c.train.train_t_long = parse_index(v); }},
      {"train.eval_t_long_list",
       [](RunConfig& c, const std::string& v) { c.train.eval_t_long_list = parse_index_list(v); }},
      {"train.grad_clip", [](RunConfig& c, const std::string& v) { c.train.grad_clip = parse_real(v); }},
      {"train.validation_chunks",
       [](RunConfig& c, const std::string& v) { c.validation_chunks = parse_index(v); }},
      {"task.cue_distance", [](RunConfig& c, const std::string& v) { c.task.cue_distance_chunks = parse_index(v); }},
      {"task.action_len", [](RunConfig& c, const std::string& v) { c.task.action_len_chunks = parse_index(v); }},
      {"task.noise_std", [](RunConfig& c, const std::string& v) { c.task.noise_std = parse_real(v); }},
      {"task.stream_len", [](RunConfig& c, const std::string& v) { c.task.stream_len_chunks = parse_index(v); }},
      {"task.event_rate", [](RunConfig& c, const std::string& v) { c.task.event_rate = parse_real(v); }},
      {"task.slot_slack", [](RunConfig& c, const std::string& v) { c.task.slot_slack = parse_index(v); }},
      {"task.cue_patches", [](RunConfig& c, const std::string& v) { c.task.cue_patches = parse_index(v); }},
      {"engine.preset", [](RunConfig& c, const std::string& v) { c.preset = parse_preset(v); }},
      {"engine.mode", [](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); }},
      {"engine.lc_refresh_interval",
       [](RunConfig& c, const std::string& v) { c.lc_refresh_interval = parse_index(v); }},
      {"bench.modes",
       [](RunConfig& c, const std::string& v) {
         c.bench_modes.clear();
         for (const auto& m : split_list(v)) c.bench_modes.push_back(parse_mode(m));
       }},
      {"bench.t_short_list", [](RunConfig& c, const std::string& v) { c.bench_t_short = parse_index_list(v); }},
      {"bench.stream_len", [](RunConfig& c, const std::string& v) { c.bench_stream_chunks = parse_index(v); }},
      {"bench.warmup", [](RunConfig& c, const std::string& v) { c.bench_warmup_chunks = parse_index(v); }},
  };
  return table;
}

}  // namespace

EngineOptions RunConfig::engine_options() const {
  EngineOptions o = preset_options(preset);
  if (mode) o.mode = *mode;
  o.lc_refresh_interval = lc_refresh_interval;
  return o;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, s] : setters()) keys.push_back(k);
  return keys;
}

RunConfig parse_config(std::string_view text, const std::string& source, RunConfig base) {
  static const std::map<std::string, const Setter*> index = [] {
    std::map<std::string, const Setter*> m;
    for (const auto& [k, s] : setters()) m.emplace(k, &s);
    return m;
  }();

  RunConfig cfg = std::move(base);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "missing value for '" + key + "'");
    try {
      (*it->second)(cfg, value);
    } catch (const BadValue& e) {
      throw ConfigError(where + key + ": " + e.message);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  cfg.task.num_classes = cfg.model.streams.num_classes;
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), std::move(base));
}

}  // namespace e2eload
