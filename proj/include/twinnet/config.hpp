#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "twinnet/common.hpp"

namespace twinnet {

// Flat key-value configuration. Keys are "section.name" (INI-style [section]
// headers in files); command-line overrides are --section.name=value. A
// config snapshot written next to run outputs reproduces the run.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_text(const std::string& text, const std::string& origin);

  // --key=value override; key must use the section.name form.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int64_t> get_int_list(const std::string& key,
                                    std::vector<int64_t> fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback) const;

  // Rejects keys outside `known` (error names the first unknown key).
  void validate_keys(const std::set<std::string>& known) const;
  // Marks keys as consumed without constraining them (e.g. section prefix).
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Deterministic snapshot (sorted keys, [section] grouped).
  std::string snapshot() const;
  void write_snapshot(const std::string& path) const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace twinnet
