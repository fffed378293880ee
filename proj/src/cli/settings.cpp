#include <charconv>
#include <cstdlib>
#include <fstream>

#include "storm/cli.hpp"
#include "storm/errors.hpp"

namespace storm::cli {

namespace {

const std::map<std::string, std::string>& builtin_values() {
  static const std::map<std::string, std::string> values{
      {"seed", "42"},
      {"frames", "32"},
      {"tokens", "256"},
      {"budget", "8192"},
      {"k", "1"},
      {"p", "1"},
      {"s", "1"},
      {"raw_tokens", "64"},
      {"downsample", "4"},
      {"input_channels", "64"},
      {"channels", "64"},
      {"state_dim", "16"},
      {"layers", "2"},
      {"grid_rows", "4"},
      {"grid_cols", "4"},
      {"direction", "bidirectional"},
      {"patch_rows", "8"},
      {"patch_cols", "8"},
      {"patch_size", "4"},
      {"colors", "3"},
      {"llm_dim", "64"},
      {"llm_layers", "2"},
      {"repetitions", "3"},
      {"warmup", "1"},
      {"probe_scale", "0.001"},
      {"needle_frame", ""},
      {"needle_amplitude", "1.0"},
      {"scan_instances", "50"},
      {"grad_instances", "20"},
      {"profile_frames", "32,64,128,256,512"},
      {"profile_specs", "1:1:1,4:1:1"},
      {"output", ""},
      {"format", "csv"},
  };
  return values;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, std::string_view text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

Settings Settings::defaults(std::string_view subcommand) {
  Settings s;
  for (const auto& [key, value] : builtin_values()) s.entries_[key] = {value, Source::builtin};
  if (subcommand == "propagate") {
    // Short frames keep every frame pair within numerically visible reach of the scan.
    for (const auto& [key, value] : std::map<std::string, std::string>{{"frames", "8"},
                                                                      {"raw_tokens", "16"},
                                                                      {"grid_rows", "2"},
                                                                      {"grid_cols", "2"},
                                                                      {"patch_rows", "4"},
                                                                      {"patch_cols", "4"}}) {
      s.entries_[key] = {value, Source::builtin};
    }
  }
  return s;
}

const std::vector<std::string>& Settings::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, _] : builtin_values()) k.push_back(key);
    return k;
  }();
  return keys;
}

void Settings::set(const std::string& key, std::string value, Source source) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown setting '" + key + "'");
  it->second = {std::move(value), source};
}

void Settings::set_assignment(std::string_view assignment, Source source) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  const auto key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + std::string(assignment) + "'");
  set(std::string(key), std::string(trim(assignment.substr(eq + 1))), source);
}

void Settings::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    try {
      set_assignment(view, Source::file);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void Settings::load_environment() {
  if (const char* seed = std::getenv("STORM_SEED"); seed != nullptr && *seed != '\0') {
    parse_integer<std::uint64_t>("STORM_SEED", seed);
    set("seed", seed, Source::environment);
  }
}

const std::string& Settings::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown setting '" + key + "'");
  return it->second.value;
}

Settings::Source Settings::source(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown setting '" + key + "'");
  return it->second.source;
}

std::uint64_t Settings::get_u64(const std::string& key) const {
  return parse_integer<std::uint64_t>(key, get(key));
}

std::size_t Settings::get_count(const std::string& key) const {
  return parse_integer<std::size_t>(key, get(key));
}

double Settings::get_real(const std::string& key) const {
  const auto& text = get(key);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a real number, got '" + text + "'");
  }
  return value;
}

std::vector<std::size_t> Settings::get_counts(const std::string& key) const {
  std::vector<std::size_t> out;
  std::string_view text = get(key);
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_integer<std::size_t>(key, trim(text.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::vector<CompressionSpec> parse_spec_list(std::string_view text) {
  std::vector<CompressionSpec> specs;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = trim(text.substr(0, comma));
    std::size_t parts[3] = {1, 1, 1};
    std::size_t idx = 0;
    std::string_view rest = item;
    while (true) {
      if (idx == 3) throw ConfigError("spec '" + std::string(item) + "' must be k:p:s");
      const auto colon = rest.find(':');
      parts[idx++] = parse_integer<std::size_t>("profile_specs", trim(rest.substr(0, colon)));
      if (colon == std::string_view::npos) break;
      rest = rest.substr(colon + 1);
    }
    if (idx != 3) throw ConfigError("spec '" + std::string(item) + "' must be k:p:s");
    CompressionSpec spec{parts[0], parts[1], parts[2]};
    spec.validate();
    specs.push_back(spec);
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  if (specs.empty()) throw ConfigError("profile_specs: empty list");
  return specs;
}

ProjectorConfig projector_config(const Settings& s) {
  ProjectorConfig c;
  c.raw_tokens_per_frame = s.get_count("raw_tokens");
  c.downsample_ratio = s.get_count("downsample");
  c.input_channels = s.get_count("input_channels");
  c.channels = s.get_count("channels");
  c.layers = s.get_count("layers");
  c.state_dim = s.get_count("state_dim");
  c.grid_rows = s.get_count("grid_rows");
  c.grid_cols = s.get_count("grid_cols");
  const auto& direction = s.get("direction");
  if (direction == "bidirectional") {
    c.direction_mode = DirectionMode::bidirectional;
  } else if (direction == "unidirectional") {
    c.direction_mode = DirectionMode::unidirectional;
  } else {
    throw ConfigError("direction must be bidirectional or unidirectional, got '" + direction + "'");
  }
  c.validate();
  return c;
}

PipelineConfig pipeline_config(const Settings& s) {
  PipelineConfig c;
  c.projector = projector_config(s);
  c.compression = {s.get_count("k"), s.get_count("p"), s.get_count("s")};
  c.patch_rows = s.get_count("patch_rows");
  c.patch_cols = s.get_count("patch_cols");
  c.patch_size = s.get_count("patch_size");
  c.colors = s.get_count("colors");
  c.llm_dim = s.get_count("llm_dim");
  c.llm_layers = s.get_count("llm_layers");
  c.frames = s.get_count("frames");
  c.budget = s.get_count("budget");
  c.repetitions = s.get_count("repetitions");
  c.warmup = s.get_count("warmup");
  c.seed = s.get_u64("seed");
  return c;
}

}  // namespace storm::cli
