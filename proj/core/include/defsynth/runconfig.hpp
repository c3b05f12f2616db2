#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

namespace defsynth::cfg {

/// Parses `text` into the same JSON type as `prototype` (integer, float,
/// boolean, or string). Throws naming the key when the text does not parse.
nlohmann::json coerce_value(const nlohmann::json& prototype, const std::string& text,
                            const std::string& key);

/// Layers a run's configuration: subcommand defaults, then values from a
/// config file, then command-line overrides (applied in order). Every key in
/// `file_values` and `overrides` must already exist in `defaults`; unknown
/// keys throw naming the offending key. File values must carry the default's
/// JSON type (strings are coerced the same way overrides are).
nlohmann::json resolve_config(const nlohmann::json& defaults,
                              const nlohmann::json& file_values,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

/// Reads a JSON config file; a missing or unparseable file throws.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Writes out_dir/run_manifest.json recording what ran and what it produced.
/// Content is fully deterministic for fixed inputs.
void write_run_manifest(const std::filesystem::path& out_dir, const std::string& subcommand,
                        const nlohmann::json& resolved_config, uint64_t seed,
                        const std::vector<std::string>& artifacts);

/// Reads out_dir/run_manifest.json back; throws when absent or invalid.
nlohmann::json read_run_manifest(const std::filesystem::path& out_dir);

}  // namespace defsynth::cfg
