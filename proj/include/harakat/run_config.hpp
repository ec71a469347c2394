#pragma once

// Run configuration for the command-line tools: a small TOML subset
// (`[section]` headers, `key = value` lines, `#` comments) merged with
// `section.key=value` overrides.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "harakat/encoders.hpp"
#include "harakat/training.hpp"
#include "json.hpp"

namespace harakat {

/// Flattened `section.key` -> raw value (quotes removed). Throws ConfigError
/// with the line number on syntax errors or repeated keys.
std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin = "<config>");
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);

struct RunConfig {
  std::string preset = "full";  // "full" or "toy"; sets architecture and clip length
  ModelConfig model;            // vocab_size and mel_frames are filled in by finalize()
  TrainConfig train;
  FeatureConfig features;
  std::filesystem::path train_manifest;
  std::optional<std::filesystem::path> dev_manifest;
  std::filesystem::path output_dir = "runs/latest";
  bool seed_set = false;

  /// Every accepted `section.key`.
  static const std::vector<std::string>& known_keys();

  /// Reads `path` (relative paths inside resolve against its directory) and
  /// then applies the overrides in order. `preset` is applied before any
  /// other key. Unknown keys raise ConfigError.
  static RunConfig load(const std::optional<std::filesystem::path>& path,
                        const std::vector<std::string>& overrides = {});

  void set(const std::string& key, const std::string& value,
           const std::filesystem::path& base_dir = {});
  void apply_preset(const std::string& name);

  /// Falls back to CW_SEED when no seed was given, derives mel_frames from
  /// the feature config and checks every field. Throws ConfigError, or
  /// DataError when a referenced manifest does not exist.
  void finalize();

  nlohmann::json to_json() const;
};

/// Seed from the CW_SEED environment variable, if set and valid.
std::optional<std::uint64_t> env_seed();

}  // namespace harakat
