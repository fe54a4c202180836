#include "twinnet/config.hpp"

#include <fstream>
#include <sstream>

namespace twinnet {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_text(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw InvalidArgument(str_cat(origin, ":", lineno, ": malformed section header"));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(str_cat(origin, ":", lineno, ": expected key = value"));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw InvalidArgument(str_cat(origin, ":", lineno, ": empty key"));
    std::string full = section.empty() ? key : section + "." + key;
    cfg.entries_[full] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(str_cat("config: cannot open '", path, "'"));
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool Config::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

std::string Config::require_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end() || it->second.empty())
    throw InvalidArgument(str_cat("config: missing required key '", key, "'"));
  return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw InvalidArgument(str_cat("config: key '", key, "' is not an integer: '",
                                  it->second, "'"));
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw InvalidArgument(str_cat("config: key '", key, "' is not a number: '",
                                  it->second, "'"));
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument(str_cat("config: key '", key, "' is not a boolean: '", v, "'"));
}

std::vector<int64_t> Config::get_int_list(const std::string& key,
                                          std::vector<int64_t> fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<int64_t> out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (...) {
      throw InvalidArgument(str_cat("config: key '", key, "' has non-integer item '",
                                    item, "'"));
    }
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            std::vector<double> fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<double> out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (...) {
      throw InvalidArgument(str_cat("config: key '", key, "' has non-numeric item '",
                                    item, "'"));
    }
  }
  return out;
}

void Config::validate_keys(const std::set<std::string>& known) const {
  for (const auto& [k, _] : entries_) {
    if (!known.count(k))
      throw InvalidArgument(str_cat("config: unknown key '", k, "'"));
  }
}

std::string Config::snapshot() const {
  std::ostringstream os;
  // Section-less keys first so re-parsing assigns them correctly.
  for (const auto& [k, v] : entries_)
    if (k.find('.') == std::string::npos) os << k << " = " << v << "\n";
  std::string section;
  for (const auto& [k, v] : entries_) {
    size_t dot = k.rfind('.');
    if (dot == std::string::npos) continue;
    std::string sec = k.substr(0, dot);
    if (sec != section) {
      os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << k.substr(dot + 1) << " = " << v << "\n";
  }
  return os.str();
}

void Config::write_snapshot(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(str_cat("config: cannot write snapshot '", path, "'"));
  f << snapshot();
}

}  // namespace twinnet
