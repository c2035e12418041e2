#include "markov_opt/keyvalue.hpp"

#include <charconv>
#include <fstream>

#include <fmt/format.h>

#include "markov_opt/errors.hpp"

namespace markov_opt {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

std::optional<double> parse_double(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<std::int64_t> parse_int(const std::string& text) {
  const std::string t = trim(text);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      out.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  const std::string last = trim(current);
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

KeyValueDocument KeyValueDocument::parse(std::istream& in, std::string source) {
  KeyValueDocument doc;
  doc.source_ = std::move(source);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", doc.source_, line, text));
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (!valid_key(key)) {
      throw ConfigError(fmt::format("{}:{}: invalid key '{}'", doc.source_, line, key));
    }
    if (value.empty()) {
      throw ConfigError(fmt::format("{}:{}: empty value for '{}'", doc.source_, line, key));
    }
    if (doc.entries_.count(key) != 0) {
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}' (first set on line {})", doc.source_,
                                    line, key, doc.entries_.at(key).line));
    }
    doc.entries_.emplace(key, Entry{value, line});
  }
  return doc;
}

KeyValueDocument KeyValueDocument::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  return parse(in, path);
}

bool KeyValueDocument::has(const std::string& key) const { return entries_.count(key) != 0; }

std::vector<std::string> KeyValueDocument::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [key, e] : entries_) {
    if (key.rfind(prefix, 0) == 0) out.push_back(key);
  }
  return out;
}

const KeyValueDocument::Entry& KeyValueDocument::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw ConfigError(fmt::format("{}: missing required key '{}'", source_, key));
  }
  used_.insert(key);
  return it->second;
}

void KeyValueDocument::fail(const std::string& key, const std::string& message) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError(fmt::format("{}: {}: {}", source_, key, message));
  throw ConfigError(fmt::format("{}:{}: {}: {}", source_, it->second.line, key, message));
}

std::string KeyValueDocument::get_string(const std::string& key) const { return entry(key).value; }

std::string KeyValueDocument::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

double KeyValueDocument::get_double(const std::string& key) const {
  const auto v = parse_double(entry(key).value);
  if (!v) fail(key, fmt::format("expected a number, got '{}'", entry(key).value));
  return *v;
}

double KeyValueDocument::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t KeyValueDocument::get_int(const std::string& key) const {
  const auto v = parse_int(entry(key).value);
  if (!v) fail(key, fmt::format("expected an integer, got '{}'", entry(key).value));
  return *v;
}

std::int64_t KeyValueDocument::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::vector<double> KeyValueDocument::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& token : split_list(entry(key).value)) {
    const auto v = parse_double(token);
    if (!v) fail(key, fmt::format("expected a list of numbers, bad item '{}'", token));
    out.push_back(*v);
  }
  return out;
}

std::vector<std::int64_t> KeyValueDocument::get_ints(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& token : split_list(entry(key).value)) {
    const auto v = parse_int(token);
    if (!v) fail(key, fmt::format("expected a list of integers, bad item '{}'", token));
    out.push_back(*v);
  }
  return out;
}

void KeyValueDocument::require_all_used() const {
  for (const auto& [key, e] : entries_) {
    if (used_.count(key) == 0) {
      throw ConfigError(fmt::format("{}:{}: unknown key '{}'", source_, e.line, key));
    }
  }
}

void KeyValueDocument::set(const std::string& key, const std::string& value) {
  entries_[key] = Entry{value, 0};
}

}  // namespace markov_opt
