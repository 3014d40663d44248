#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cpshield::cfg {

/// Flat `key = value` configuration. Keys are dotted paths
/// (e.g. guard.epochs); values stay strings until queried.
class KeyValues {
 public:
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  float get_float(const std::string& key, float fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated float list.
  std::vector<float> get_floats(const std::string& key, std::vector<float> fallback) const;

  /// Requires the key to exist; throws std::runtime_error otherwise.
  std::string require(const std::string& key) const;

  void merge(const KeyValues& overrides);

  /// Sorted "key = value" lines; the digest input.
  std::string canonical() const;

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
/// Throws std::runtime_error on unreadable files or malformed lines.
KeyValues parse_file(const std::string& path);

/// Parses "key=value" strings (CLI overrides).
KeyValues parse_overrides(const std::vector<std::string>& pairs);

/// FNV-1a 64-bit, hex encoded.
std::string fnv1a_hex(std::string_view text);

}  // namespace cpshield::cfg
