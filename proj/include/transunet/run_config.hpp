#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "transunet/data.hpp"
#include "transunet/model_config.hpp"
#include "transunet/training.hpp"

namespace transunet {

// Flat settings file, one `key = value` per line, `#` starts a comment.
// Keys are dotted: model.<name>, train.<name>, data.<name>, plus `seed`.
using Settings = std::map<std::string, std::string>;

// Throws ConfigError naming the line on malformed input.
Settings parse_settings(const std::string& text, const std::string& source = "config");
Settings read_settings(const std::filesystem::path& path);
// `key=value`; later overrides win.
void apply_override(Settings& settings, const std::string& assignment);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec data{default_phantom_spec()};
  // Existing dataset directory; empty means generate `data` in memory.
  std::string data_dir;
  // Seeds model initialization and training.
  std::uint64_t seed = 0;

  Settings to_settings() const;
  // Keys absent from `settings` keep their defaults. Unknown keys throw.
  static RunConfig from_settings(const Settings& settings);
  // Sorted `key = value` lines; parse_settings reads it back unchanged.
  std::string serialize() const;
  void validate() const;
};

}  // namespace transunet
