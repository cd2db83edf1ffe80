#pragma once
// Line-delimited text codec for driving an environment over a byte stream.
// One message per line: a kind token followed by key=value fields separated
// by single spaces. Values are escaped so any byte sequence stays on one
// line; numbers use enough decimal digits to round-trip bit-exactly.

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relayrl/feeder.hpp"

namespace relayrl {

constexpr int kWireVersion = 1;

namespace wire {

// Escapes: '\\' backslash, '\n' newline, '\r' carriage return, '\s' space.
inline std::string escape(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case ' ': out += "\\s"; break;
      default: out += c;
    }
  }
  return out;
}

// offset is the position within the escaped text where decoding failed,
// relative to `base` (the field's position in the full line).
inline std::string unescape(const std::string& esc, std::size_t base = 0) {
  std::string out;
  out.reserve(esc.size());
  for (std::size_t i = 0; i < esc.size(); ++i) {
    if (esc[i] != '\\') {
      out += esc[i];
      continue;
    }
    if (i + 1 >= esc.size())
      throw std::runtime_error("decode error at offset " + std::to_string(base + i) +
                               ": dangling escape");
    char c = esc[++i];
    switch (c) {
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 's': out += ' '; break;
      default:
        throw std::runtime_error("decode error at offset " + std::to_string(base + i) +
                                 ": unknown escape '\\" + std::string(1, c) + "'");
    }
  }
  return out;
}

inline bool kind_char(char c, bool first) {
  if (c >= 'a' && c <= 'z') return true;
  if (c == '_') return true;
  if (!first && c >= '0' && c <= '9') return true;
  return false;
}

}  // namespace wire

struct WireMessage {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> fields;  // ordered, raw values

  bool operator==(const WireMessage&) const = default;

  void add(std::string key, std::string value) {
    fields.emplace_back(std::move(key), std::move(value));
  }
  void add_int(const std::string& key, long long v) { add(key, std::to_string(v)); }
  void add_double(const std::string& key, double v) { add(key, format_double(v)); }
  void add_doubles(const std::string& key, const std::vector<double>& vs) {
    std::string joined;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (i) joined += ',';
      joined += format_double(vs[i]);
    }
    add(key, joined);
  }
  void add_ints(const std::string& key, const std::vector<int>& vs) {
    std::string joined;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (i) joined += ',';
      joined += std::to_string(vs[i]);
    }
    add(key, joined);
  }

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return &v;
    return nullptr;
  }
  const std::string& need(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw std::runtime_error("missing field '" + key + "'");
    return *v;
  }
  long long need_int(const std::string& key) const {
    const std::string& raw = need(key);
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(raw.c_str(), &end, 10);
    if (raw.empty() || end != raw.c_str() + raw.size() || errno == ERANGE)
      throw std::runtime_error("field '" + key + "' is not an integer: '" + raw + "'");
    return v;
  }
  std::uint64_t need_uint(const std::string& key) const {
    const std::string& raw = need(key);
    char* end = nullptr;
    errno = 0;
    unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
    if (raw.empty() || raw[0] == '-' || end != raw.c_str() + raw.size() || errno == ERANGE)
      throw std::runtime_error("field '" + key + "' is not an unsigned integer: '" + raw + "'");
    return v;
  }
  double need_double(const std::string& key) const {
    const std::string& raw = need(key);
    return parse_wire_double(key, raw);
  }
  std::vector<double> need_doubles(const std::string& key) const {
    const std::string& raw = need(key);
    std::vector<double> out;
    if (raw.empty()) return out;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = raw.find(',', start);
      std::string tok = raw.substr(start, comma == std::string::npos ? comma : comma - start);
      out.push_back(parse_wire_double(key, tok));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }
  std::vector<int> need_ints(const std::string& key) const {
    const std::string& raw = need(key);
    std::vector<int> out;
    if (raw.empty()) return out;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = raw.find(',', start);
      std::string tok = raw.substr(start, comma == std::string::npos ? comma : comma - start);
      char* end = nullptr;
      errno = 0;
      long long v = std::strtoll(tok.c_str(), &end, 10);
      if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE || v < INT32_MIN ||
          v > INT32_MAX)
        throw std::runtime_error("field '" + key + "' is not an integer list: '" + raw + "'");
      out.push_back(static_cast<int>(v));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

 private:
  static double parse_wire_double(const std::string& key, const std::string& raw) {
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(raw.c_str(), &end);
    if (raw.empty() || end != raw.c_str() + raw.size())
      throw std::runtime_error("field '" + key + "' is not a number: '" + raw + "'");
    return v;
  }
};

// One line, no trailing newline.
inline std::string encode_line(const WireMessage& m) {
  if (m.kind.empty()) throw std::invalid_argument("message kind is empty");
  for (std::size_t i = 0; i < m.kind.size(); ++i)
    if (!wire::kind_char(m.kind[i], i == 0))
      throw std::invalid_argument("invalid message kind '" + m.kind + "'");
  std::string out = m.kind;
  for (const auto& [k, v] : m.fields) {
    if (k.empty()) throw std::invalid_argument("empty field key");
    for (char c : k)
      if (!wire::kind_char(c, false))
        throw std::invalid_argument("invalid field key '" + k + "'");
    out += ' ';
    out += k;
    out += '=';
    out += wire::escape(v);
  }
  return out;
}

// Inverse of encode_line. Errors name the byte offset within the line.
inline WireMessage decode_line(const std::string& line) {
  auto fail = [](std::size_t offset, const std::string& why) -> void {
    throw std::runtime_error("decode error at offset " + std::to_string(offset) + ": " + why);
  };
  if (line.empty()) fail(0, "empty message");
  if (line.find('\n') != std::string::npos) fail(line.find('\n'), "embedded newline");

  WireMessage m;
  std::size_t pos = 0;
  while (pos < line.size() && line[pos] != ' ') {
    if (!wire::kind_char(line[pos], pos == 0)) fail(pos, "invalid kind character");
    ++pos;
  }
  if (pos == 0) fail(0, "invalid kind character");
  m.kind = line.substr(0, pos);

  while (pos < line.size()) {
    // pos sits on the separating space
    std::size_t field_start = pos + 1;
    if (field_start >= line.size() || line[field_start] == ' ')
      fail(field_start, "empty field");
    std::size_t eq = line.find('=', field_start);
    std::size_t space = line.find(' ', field_start);
    if (eq == std::string::npos || (space != std::string::npos && space < eq))
      fail(field_start, "field without '='");
    if (eq == field_start) fail(field_start, "empty field key");
    for (std::size_t i = field_start; i < eq; ++i)
      if (!wire::kind_char(line[i], false)) fail(i, "invalid field key character");
    std::size_t value_end = space == std::string::npos ? line.size() : space;
    m.add(line.substr(field_start, eq - field_start),
          wire::unescape(line.substr(eq + 1, value_end - eq - 1), eq + 1));
    pos = value_end;
  }
  return m;
}

}  // namespace relayrl
