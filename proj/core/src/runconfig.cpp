#include "defsynth/runconfig.hpp"

#include <fstream>
#include <stdexcept>

namespace defsynth::cfg {

using nlohmann::json;

json coerce_value(const json& prototype, const std::string& text, const std::string& key) {
  try {
    if (prototype.is_boolean()) {
      if (text == "true" || text == "1" || text == "on") return true;
      if (text == "false" || text == "0" || text == "off") return false;
      throw std::invalid_argument("not a boolean");
    }
    if (prototype.is_number_integer()) {
      size_t used = 0;
      int64_t v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (prototype.is_number_unsigned()) {
      size_t used = 0;
      uint64_t v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (prototype.is_number_float()) {
      size_t used = 0;
      double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (prototype.is_string()) return text;
  } catch (const std::exception&) {
    throw std::invalid_argument("invalid value '" + text + "' for key '" + key + "'");
  }
  throw std::invalid_argument("key '" + key + "' has a non-scalar type and cannot be set");
}

json resolve_config(const json& defaults, const json& file_values,
                    const std::vector<std::pair<std::string, std::string>>& overrides) {
  json resolved = defaults;
  if (!file_values.is_null()) {
    if (!file_values.is_object())
      throw std::invalid_argument("config file must hold a JSON object");
    for (const auto& [key, value] : file_values.items()) {
      auto it = resolved.find(key);
      if (it == resolved.end())
        throw std::invalid_argument("unknown config key '" + key + "'");
      if (value.is_string() && !it->is_string())
        *it = coerce_value(*it, value.get<std::string>(), key);
      else if (value.type() == it->type() ||
               (value.is_number() && it->is_number()))
        *it = value;
      else
        throw std::invalid_argument("config key '" + key + "' has the wrong type");
    }
  }
  for (const auto& [key, text] : overrides) {
    auto it = resolved.find(key);
    if (it == resolved.end())
      throw std::invalid_argument("unknown override key '" + key + "'");
    *it = coerce_value(*it, text, key);
  }
  return resolved;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw std::invalid_argument("config file " + path.string() + " is not valid JSON");
  return j;
}

void write_run_manifest(const std::filesystem::path& out_dir, const std::string& subcommand,
                        const json& resolved_config, uint64_t seed,
                        const std::vector<std::string>& artifacts) {
  std::filesystem::create_directories(out_dir);
  json manifest{{"subcommand", subcommand},
                {"config", resolved_config},
                {"seed", seed},
                {"artifacts", artifacts}};
  std::ofstream out(out_dir / "run_manifest.json", std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write run manifest under " + out_dir.string());
  out << manifest.dump(2) << '\n';
}

json read_run_manifest(const std::filesystem::path& out_dir) {
  std::ifstream in(out_dir / "run_manifest.json");
  if (!in)
    throw std::runtime_error("no run manifest under " + out_dir.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error("run manifest under " + out_dir.string() +
                             " is not valid JSON");
  return j;
}

}  // namespace defsynth::cfg
