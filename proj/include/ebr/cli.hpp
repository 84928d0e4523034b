#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace ebr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitRuntime = 4;

/// Every configurable key with its default. Sections: data, base, lm, energy,
/// train, eval, analysis, sweep; plus top-level seed and task.
nlohmann::json default_config();

/// Reads a .json file, or a TOML file for any other extension.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Overlays `overlay` onto `base`. Throws InvalidConfig for keys absent from
/// the schema or values of the wrong type; integers are accepted where a
/// real is expected.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

/// Range checks on a merged config. Throws InvalidConfig.
void validate_config(const nlohmann::json& cfg);

/// Entry point of the `ebr` tool. Returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace ebr::cli
