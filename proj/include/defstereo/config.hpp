#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

namespace defstereo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-text `key = value` configuration; `#` starts a comment.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;

  /// Throws if any key is outside `known`.
  void require_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> entries_;
  std::string source_;
};

}  // namespace defstereo
