#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rcms {

/// One `key = value` line with its source line number.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// A `[name]` block. Keys appearing before the first header land in a section
/// with an empty name.
struct Section {
  std::string name;
  std::size_t line = 0;
  std::vector<KeyValue> entries;

  const KeyValue* find(std::string_view key) const;
  /// Throws ParseError if the key is absent.
  const KeyValue& require(std::string_view key) const;
};

/// Parses `[section]` headers and `key = value` lines; `#` starts a comment.
/// Throws ParseError on malformed lines.
std::vector<Section> parse_sections(std::istream& in, std::string_view source_name);

double parse_double(const KeyValue& kv);
long long parse_int(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);
std::vector<double> parse_double_list(std::string_view text);

/// Shortest decimal text that reads back to the identical double.
std::string format_double(double value);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

}  // namespace rcms
