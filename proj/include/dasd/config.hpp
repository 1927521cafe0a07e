#pragma once

// Flat "key = value" config files shared by every subcommand.
// '#' starts a comment; blank lines are ignored; unknown and repeated keys
// are errors.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dasd/trainer.hpp"

namespace dasd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keys that must be present in every config file.
const std::vector<std::string>& required_config_keys();
/// Every accepted key, in the order write_config emits them.
const std::vector<std::string>& known_config_keys();

std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Throws ConfigError for syntax, unknown or missing keys and unparseable
/// values. Range checks are left to TrainConfig::validate.
TrainConfig config_from_text(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// Applies one "key=value" override on top of an existing config.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Full round-trippable rendering (every key, doubles in shortest exact form).
std::string config_to_text(const TrainConfig& config);

}  // namespace dasd
