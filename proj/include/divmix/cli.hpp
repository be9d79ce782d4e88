#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace divmix::cli {

/// Every recognised config key with its default value.
nlohmann::json default_config();

/// Defaults merged with a config file. Unknown keys are rejected and relative
/// paths are resolved against the file's directory.
nlohmann::json load_config(const std::filesystem::path& path);

/// Applies `key=value` with a dotted key that must already exist. The value
/// is parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Entry point behind the `divmix` binary; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace divmix::cli
