#include "rcms/keyvalue.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "rcms/core_types.hpp"

namespace rcms {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

const KeyValue* Section::find(std::string_view key) const {
  for (const auto& kv : entries)
    if (kv.key == key) return &kv;
  return nullptr;
}

const KeyValue& Section::require(std::string_view key) const {
  if (const auto* kv = find(key)) return *kv;
  throw Error(Errc::ParseError,
              fmt::format("section [{}] at line {}: missing key '{}'", name, line, key));
}

std::vector<Section> parse_sections(std::istream& in, std::string_view source_name) {
  std::vector<Section> sections;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw Error(Errc::ParseError,
                    fmt::format("{}:{}: malformed section header '{}'", source_name, line_no, line));
      sections.push_back(Section{trim(std::string_view(line).substr(1, line.size() - 2)), line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::ParseError,
                  fmt::format("{}:{}: expected 'key = value', got '{}'", source_name, line_no, line));
    KeyValue kv{trim(std::string_view(line).substr(0, eq)),
                trim(std::string_view(line).substr(eq + 1)), line_no};
    if (kv.key.empty())
      throw Error(Errc::ParseError, fmt::format("{}:{}: empty key", source_name, line_no));
    if (sections.empty()) sections.push_back(Section{"", 0, {}});
    sections.back().entries.push_back(std::move(kv));
  }
  return sections;
}

namespace {

template <typename T>
T parse_number(std::string_view text, std::string_view what, std::size_t line) {
  T value{};
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  if (!text.empty() && text.front() == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end)
    throw Error(Errc::ParseError, fmt::format("line {}: '{}' is not a valid {} ('{}')", line, text,
                                              sizeof(T) == sizeof(double) ? "number" : "integer", what));
  return value;
}

}  // namespace

double parse_double(const KeyValue& kv) {
  const double v = parse_number<double>(kv.value, kv.key, kv.line);
  if (!std::isfinite(v))
    throw Error(Errc::ParseError, fmt::format("line {}: {} must be finite", kv.line, kv.key));
  return v;
}

long long parse_int(const KeyValue& kv) { return parse_number<long long>(kv.value, kv.key, kv.line); }

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  throw Error(Errc::ParseError, fmt::format("line {}: {} must be true or false", kv.line, kv.key));
}

std::vector<double> parse_double_list(std::string_view text) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) {
    if (item.empty()) continue;
    out.push_back(parse_number<double>(item, "list item", 0));
  }
  return out;
}

std::string format_double(double value) { return fmt::format("{}", value); }

}  // namespace rcms
