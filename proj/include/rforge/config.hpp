#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rforge/common.hpp"

// Flat key=value run configuration merged from (defaults, config file, flags,
// environment), later sources overriding earlier ones. Unknown keys are
// rejected so typos fail loudly.

namespace rforge {

struct RunConfig {
  std::map<std::string, std::string> values;
  uint64_t seed = 0;

  const std::string& get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ParamError("config: unknown key " + key);
    return it->second;
  }
  int64_t get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
      size_t pos = 0;
      int64_t out = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ParamError("config: key " + key + " is not an integer: " + v);
    }
  }
  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
      size_t pos = 0;
      double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ParamError("config: key " + key + " is not a number: " + v);
    }
  }

  // sorted key=value dump, the format config files use
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values) out += k + "=" + v + "\n";
    return out;
  }
};

namespace configdetail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace configdetail

// key=value lines; '#' starts a comment; returns pairs in file order.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = configdetail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParamError("config: malformed line " + std::to_string(lineno) + " in " +
                       path.string() + ": " + line);
    std::string key = configdetail::trim(line.substr(0, eq));
    std::string value = configdetail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ParamError("config: empty key on line " + std::to_string(lineno) + " in " +
                       path.string());
    out.push_back({key, value});
  }
  return out;
}

// Precedence: defaults < file < flags < environment. The recognized key set is
// the defaults' key set; anything else is an error naming the key.
inline RunConfig resolve_config(const std::map<std::string, std::string>& defaults,
                                const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& flags,
                                const std::map<std::string, std::string>& env) {
  RunConfig cfg;
  cfg.values = defaults;
  if (!cfg.values.count("seed")) cfg.values["seed"] = "0";

  auto apply = [&](const std::string& key, const std::string& value, const std::string& source) {
    if (!cfg.values.count(key))
      throw ParamError("config: unknown key '" + key + "' from " + source);
    cfg.values[key] = value;
  };
  if (file)
    for (const auto& [k, v] : parse_config_file(*file)) apply(k, v, "file " + file->string());
  for (const auto& [k, v] : flags) apply(k, v, "command line");
  if (auto it = env.find("RFORGE_SEED"); it != env.end()) apply("seed", it->second, "environment");

  try {
    cfg.seed = uint64_t(cfg.get_int("seed"));
  } catch (const ParamError&) {
    throw ParamError("config: seed is not an integer: " + cfg.values.at("seed"));
  }
  return cfg;
}

// Snapshot of the process environment variables the config system reads.
inline std::map<std::string, std::string> environment_config() {
  std::map<std::string, std::string> env;
  if (const char* s = std::getenv("RFORGE_SEED")) env["RFORGE_SEED"] = s;
  if (const char* s = std::getenv("RFORGE_THREADS")) env["RFORGE_THREADS"] = s;
  return env;
}

}  // namespace rforge
