#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kmamba/common.hpp"

namespace kmamba {

// Plain-text key-value configuration: one `section.key = value` per line,
// `#` starts a comment. Unknown keys are preserved verbatim.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated integer list, e.g. "8,16,32,64,128".
  std::vector<int64_t> get_int_list(const std::string& key, std::vector<int64_t> fallback) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  std::string serialize() const;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace kmamba
