#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pbf {

/// `key = value` lines; `#` starts a comment; blank lines ignored.
/// Keys are unique. Every lookup marks the key used so callers can reject
/// unknown keys with require_all_used().
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& source = "<memory>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list.
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Throws ConfigError naming the first key never looked up.
  void require_all_used() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::string source_;
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace pbf
