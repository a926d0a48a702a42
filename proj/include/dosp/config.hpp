#pragma once

// Flat `key = value` experiment files. `#` starts a comment; list values are
// comma separated. Every accessor marks its key as consumed so leftovers can be
// reported as unknown.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dosp {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}
} // namespace detail

class Config {
public:
  static Config parse(std::istream& in, const std::string& source = "<config>") {
    Config c;
    c.source_ = source;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string text = detail::trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected `key = value`");
      const std::string key = detail::trim(std::string_view(text).substr(0, eq));
      const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (value.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": " + key + ": empty value");
      if (!c.values_.emplace(key, value).second)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + key + ": duplicate key");
    }
    return c;
  }

  static Config parse_string(const std::string& text, const std::string& source = "<config>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse(in, path);
  }

  const std::string& source() const noexcept { return source_; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
  }

  double get_double(const std::string& key, double fallback) const {
    const auto v = raw(key);
    return v ? to_double(key, *v) : fallback;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto v = raw(key);
    return v ? to_int(key, *v) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw error(key, "expected true or false, got '" + *v + "'");
  }

  std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(*v);
    for (std::string item; std::getline(ss, item, ',');) {
      item = detail::trim(item);
      if (item.empty()) throw error(key, "empty list element");
      out.push_back(item);
    }
    return out;
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : get_strings(key, {})) out.push_back(to_double(key, s));
    return out;
  }

  /// Keys present in the file that no accessor asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unknown() const {
    const auto extra = unused_keys();
    if (extra.empty()) return;
    std::string msg = source_ + ": unknown key(s):";
    for (const auto& k : extra) msg += " " + k;
    throw ConfigError(msg);
  }

  ConfigError error(const std::string& key, const std::string& what) const {
    return ConfigError(source_ + ": " + key + ": " + what);
  }

private:
  double to_double(const std::string& key, const std::string& s) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw error(key, "expected a number, got '" + s + "'");
    }
  }

  std::int64_t to_int(const std::string& key, const std::string& s) const {
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size()) return v;
    // allow integral scientific notation such as 1e5
    const double d = to_double(key, s);
    if (d != static_cast<double>(static_cast<std::int64_t>(d)))
      throw error(key, "expected an integer, got '" + s + "'");
    return static_cast<std::int64_t>(d);
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

} // namespace dosp
