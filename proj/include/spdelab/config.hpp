#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spdelab {

// Configuration problem (bad syntax, missing/unknown key, bad value).
// Carries the offending line number (0 when not tied to a line) so the
// CLI can point at the problem.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& msg, int line_no = 0,
              const std::string& key_name = {})
      : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) +
                                             ": " + msg
                                       : msg),
        line(line_no),
        key(key_name) {}
  int line;
  std::string key;
};

// Flat key-value configuration with [sections]; keys are addressed as
// "section.key".  '#' and ';' start comments; later duplicate keys are
// rejected.
class Config {
 public:
  static Config parse_text(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw ConfigError("unterminated section header", line_no);
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty())
          throw ConfigError("empty section name", line_no);
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("expected 'key = value'", line_no);
      const std::string key = trim(t.substr(0, eq));
      const std::string val = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key", line_no);
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.entries_.count(full))
        throw ConfigError("duplicate key '" + full + "'", line_no, full);
      cfg.entries_[full] = {val, line_no};
      cfg.order_.push_back(full);
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  const std::vector<std::string>& keys_in_order() const { return order_; }

  std::string get_string(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end())
      throw ConfigError("missing required key '" + key + "'", 0, key);
    return it->second.value;
  }

  std::string get_string_or(const std::string& key,
                            const std::string& fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  double get_double(const std::string& key) const {
    return to_double(key, get_string(key));
  }
  double get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long long get_int(const std::string& key) const {
    return to_int(key, get_string(key));
  }
  long long get_int_or(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  std::uint64_t get_seed_or(const std::string& key,
                            std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    try {
      return std::stoull(get_string(key));
    } catch (const std::exception&) {
      throw ConfigError("value of '" + key + "' is not a valid seed",
                        line_of(key), key);
    }
  }

  bool get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw ConfigError("value of '" + key + "' is not a boolean", line_of(key),
                      key);
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::istringstream is(get_string(key));
    std::vector<double> out;
    std::string tok;
    while (is >> tok) out.push_back(to_double(key, tok));
    return out;
  }
  std::vector<double> get_doubles_or(const std::string& key,
                                     std::vector<double> fallback) const {
    return has(key) ? get_doubles(key) : fallback;
  }

  int line_of(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  // Reject keys outside the allowed set (catches typos early).
  void require_known_keys(const std::vector<std::string>& allowed) const {
    for (const auto& k : order_) {
      bool found = false;
      for (const auto& a : allowed)
        if (a == k) {
          found = true;
          break;
        }
      if (!found)
        throw ConfigError("unknown key '" + k + "' for this experiment",
                          line_of(k), k);
    }
  }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("value '" + v + "' of '" + key + "' is not a number",
                        line_of(key), key);
    }
  }

  long long to_int(const std::string& key, const std::string& v) const {
    try {
      size_t pos = 0;
      const long long i = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return i;
    } catch (const std::exception&) {
      throw ConfigError("value '" + v + "' of '" + key + "' is not an integer",
                        line_of(key), key);
    }
  }

  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace spdelab
