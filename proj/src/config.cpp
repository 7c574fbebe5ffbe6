#include "hetsed/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hetsed {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  ConfigFile cfg = parse_text(buf.str(), path);

  // Resolve includes relative to the including file.
  if (cfg.has("", "include")) {
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    ConfigFile merged = parse_file((base / cfg.get_string("", "include")).string());
    merged.merge_from(cfg);
    merged.sections_[""].erase("include");
    return merged;
  }
  return cfg;
}

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections_[section];
      continue;
    }
    const std::size_t arrow = line.find("->");
    const std::size_t eq = line.find('=');
    if (arrow != std::string::npos && (eq == std::string::npos || arrow < eq)) {
      std::string src = trim(line.substr(0, arrow));
      std::string dst = trim(line.substr(arrow + 2));
      if (src.empty() || dst.empty()) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed link line");
      }
      cfg.links_[section].emplace_back(src, dst);
      continue;
    }
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

void ConfigFile::merge_from(const ConfigFile& other) {
  for (const auto& [sec, kv] : other.sections_) {
    for (const auto& [k, v] : kv) sections_[sec][k] = v;
  }
  for (const auto& [sec, ls] : other.links_) links_[sec] = ls;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

bool ConfigFile::has_section(const std::string& section) const {
  return sections_.count(section) > 0 || links_.count(section) > 0;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  if (it == sections_.end() || it->second.count(key) == 0) {
    throw ConfigError("missing config key [" + section + "] " + key);
  }
  return it->second.at(key);
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_string(section, key);
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("[" + section + "] " + key + ": not a number: " + v);
  }
  return x;
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_string(section, key);
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("[" + section + "] " + key + ": not an integer: " + v);
  }
  return static_cast<int>(x);
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_string(section, key);
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("[" + section + "] " + key + ": not an integer: " + v);
  }
  return static_cast<std::uint64_t>(x);
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_string(section, key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("[" + section + "] " + key + ": not a boolean: " + v);
}

std::vector<std::string> ConfigFile::get_list(const std::string& section,
                                              const std::string& key) const {
  std::vector<std::string> out;
  std::string v = get_string(section, key);
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t comma = v.find(',', pos);
    if (comma == std::string::npos) comma = v.size();
    std::string item = trim(v.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

const std::vector<std::pair<std::string, std::string>>& ConfigFile::links(
    const std::string& section) const {
  static const std::vector<std::pair<std::string, std::string>> kEmpty;
  auto it = links_.find(section);
  return it == links_.end() ? kEmpty : it->second;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  sections_[section][key] = value;
}

std::vector<std::string> ConfigFile::section_names() const {
  std::vector<std::string> out;
  for (const auto& [sec, kv] : sections_) {
    (void)kv;
    out.push_back(sec);
  }
  return out;
}

ClassVocabulary load_vocabulary(const ConfigFile& cfg) {
  return ClassVocabulary(cfg.get_list("vocab", "desed"), cfg.get_list("vocab", "maestro"));
}

ClassMapping load_mapping(const ConfigFile& cfg, const ClassVocabulary& vocab) {
  ClassMapping mapping;
  for (const auto& [src, dst] : cfg.links("mapping.maestro_to_desed")) {
    mapping.add_maestro_to_desed(vocab, src, dst);
  }
  for (const auto& [src, dst] : cfg.links("mapping.desed_to_maestro")) {
    mapping.add_desed_to_maestro(vocab, src, dst);
  }
  return mapping;
}

}  // namespace hetsed
