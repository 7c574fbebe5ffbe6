#pragma once

#include <map>
#include <string>
#include <vector>

#include "hetsed/core.hpp"

namespace hetsed {

// Flat plain-text experiment configuration.
//
//   [section]
//   key = value            # comment
//   include = other.cfg    (top level; merged first, later keys override)
//
// Link lines inside [mapping.maestro_to_desed] / [mapping.desed_to_maestro]
// use "source_class -> target_class".
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;

  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  // Comma-separated list.
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

  // "a -> b" lines of a section, in file order.
  const std::vector<std::pair<std::string, std::string>>& links(const std::string& section) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  std::vector<std::string> section_names() const;

 private:
  void merge_from(const ConfigFile& other);

  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> links_;
};

// Loads the [vocab] class lists and the mapping link sections.
ClassVocabulary load_vocabulary(const ConfigFile& cfg);
ClassMapping load_mapping(const ConfigFile& cfg, const ClassVocabulary& vocab);

std::string trim(const std::string& s);

}  // namespace hetsed
