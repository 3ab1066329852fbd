#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cil/engine.hpp"

namespace cil {

// Flat "key = value" text, TOML-compatible for the subset used here: '#'
// comments, optional quotes around strings, [a, b] lists, true/false.
// Section headers are accepted and ignored. Keys mirror ProtocolConfig field
// names; unknown keys are rejected.
std::vector<std::pair<std::string, std::string>> parse_settings(const std::string& text);

// Applies one setting; throws ConfigError for unknown keys or bad values.
void apply_setting(ProtocolConfig& config, const std::string& key, const std::string& value);

ProtocolConfig load_config(const std::filesystem::path& path);
ProtocolConfig config_from_text(const std::string& text);

// Every key apply_setting accepts, for --help output.
const std::vector<std::string>& setting_keys();

}  // namespace cil
