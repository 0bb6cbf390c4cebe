// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "condlstmq/errors.hpp"

namespace condlstmq::csv {

/// Splits one RFC 4180 record. Quoted fields may contain commas and "".
inline std::vector<std::string> split_record(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based file line of each row

  [[nodiscard]] std::optional<std::size_t> find_column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }

  [[nodiscard]] std::size_t column(const std::string& name) const {
    if (auto c = find_column(name)) return *c;
    throw ParseError(source + ": missing required column '" + name + "'");
  }
};

/// Reads a UTF-8 comma-separated file with a header row. Rows whose field
/// count differs from the header are parse errors.
inline Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  Table t;
  t.source = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
      line.erase(0, 3);
    if (line.empty() || line == "\r") continue;
    auto fields = split_record(line, line_no);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw ParseError(path + ": no header row");
  return t;
}

/// True for cells that denote a missing value.
inline bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "(NA)" || s == "(D)" || s == "null";
}

/// Parses a numeric cell; nullopt for missing markers, ParseError for text.
inline std::optional<double> parse_number(const std::string& raw, const std::string& where) {
  std::string s;
  for (char ch : raw)
    if (ch != ' ' && ch != '\t') s += ch;
  if (is_missing(s)) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) throw ParseError(where + ": not a number: '" + raw + "'");
  return v;
}

/// Normalizes a county FIPS code to five digits ("6037", "6037.0" -> "06037").
inline std::string normalize_fips(const std::string& raw, std::size_t width = 5) {
  std::string s;
  for (char ch : raw)
    if (ch != ' ' && ch != '"') s += ch;
  if (auto dot = s.find('.'); dot != std::string::npos) {
    for (std::size_t i = dot + 1; i < s.size(); ++i)
      if (s[i] != '0') return {};
    s.erase(dot);
  }
  if (s.empty() || s.size() > width) return {};
  for (char ch : s)
    if (ch < '0' || ch > '9') return {};
  return std::string(width - s.size(), '0') + s;
}

}  // namespace condlstmq::csv
