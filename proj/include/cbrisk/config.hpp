#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cbrisk {

/// Flat key = value configuration document. '#' starts a comment, keys may use
/// dotted sections ("cv.folds"), later assignments win. Values are kept as
/// strings and converted on access.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  /// Apply a "key=value" override (the CLI --set flag).
  void set_override(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  /// Comma-separated list of reals.
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key,
                                  std::vector<double> fallback) const;
  /// Comma-separated list of strings (trimmed).
  std::vector<std::string> get_strings(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// Canonical "key = value" serialization (sorted keys).
  std::string canonical() const;
  /// FNV-1a hash of the canonical form, as fixed-width hex.
  std::string hash() const;

 private:
  std::map<std::string, std::string> entries_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace cbrisk
