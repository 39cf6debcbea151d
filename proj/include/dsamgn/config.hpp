#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dsamgn {

/// `key = value` text with `#` comments. Readers mark keys as consumed so
/// that leftovers can be rejected as unknown. Parse failures throw ConfigError.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  /// Comma-separated list of numbers.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback);

  /// Throws ConfigError naming every key no reader consumed.
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

std::string format_double(double v);
std::string format_doubles(const std::vector<double>& v);

}  // namespace dsamgn
