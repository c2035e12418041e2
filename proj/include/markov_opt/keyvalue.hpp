#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace markov_opt {

/// Line-oriented `dotted.key = value` documents with `#` comments.
///
/// Every accessor reports failures as ConfigError anchored at
/// `source:line`. Accessed keys are tracked so callers can reject typos with
/// `require_all_used()`.
class KeyValueDocument {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  static KeyValueDocument parse(std::istream& in, std::string source = "<config>");
  static KeyValueDocument parse_file(const std::string& path);

  const std::string& source() const { return source_; }
  bool has(const std::string& key) const;
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::int64_t> get_ints(const std::string& key) const;

  /// Throws ConfigError for an ill-formed value at `key`, anchored at its line.
  [[noreturn]] void fail(const std::string& key, const std::string& message) const;

  /// Throws ConfigError naming the first key nobody asked for.
  void require_all_used() const;

  void set(const std::string& key, const std::string& value);

 private:
  const Entry& entry(const std::string& key) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

/// Shortest round-trip text for a double (17 significant digits).
std::string format_double(double v);

/// Splits "a, b ,c" into trimmed tokens.
std::vector<std::string> split_list(const std::string& text);

}  // namespace markov_opt
