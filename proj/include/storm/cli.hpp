#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "storm/pipeline.hpp"

namespace storm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;

/// Layered key=value settings. Precedence, lowest first: built-in default,
/// STORM_SEED (seed only), config file, command line.
class Settings {
 public:
  enum class Source { builtin, environment, file, command_line };

  /// Defaults for `subcommand` (some subcommands use smaller projector grids).
  static Settings defaults(std::string_view subcommand = {});

  /// Throws ConfigError for keys outside the known set.
  void set(const std::string& key, std::string value, Source source);
  /// Parses "key=value"; throws ConfigError when malformed.
  void set_assignment(std::string_view assignment, Source source);
  /// One "key = value" per line; '#' starts a comment.
  void load_file(const std::filesystem::path& path);
  void load_environment();

  const std::string& get(const std::string& key) const;
  Source source(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::vector<std::size_t> get_counts(const std::string& key) const;  // comma-separated

  static const std::vector<std::string>& known_keys();

 private:
  struct Entry {
    std::string value;
    Source source = Source::builtin;
  };
  std::map<std::string, Entry> entries_;
};

std::vector<CompressionSpec> parse_spec_list(std::string_view text);  // "k:p:s,k:p:s"
ProjectorConfig projector_config(const Settings& settings);
PipelineConfig pipeline_config(const Settings& settings);

/// Entry point behind the `storm` executable. Returns the process exit code.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace storm::cli
