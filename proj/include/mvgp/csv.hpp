#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mvgp/common.hpp"

namespace mvgp {

/// Parsed CSV: one header row plus string cells. No quoting; fields must not
/// contain commas or newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error("empty file: " + path);
  t.header = detail::split_line(detail::strip_cr(line));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto cells = detail::split_line(line);
    if (cells.size() != t.header.size()) {
      throw Error(path + ":" + std::to_string(lineno) + ": expected " +
                  std::to_string(t.header.size()) + " fields, got " +
                  std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Strict integer parse; rejects "3.0", "1e2", stray whitespace, empty cells.
inline long long parse_strict_int(const std::string& s, const std::string& where) {
  if (s.empty()) throw Error(where + ": empty cell where integer expected");
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i == s.size()) throw Error(where + ": not an integer: '" + s + "'");
  for (std::size_t k = i; k < s.size(); ++k) {
    if (s[k] < '0' || s[k] > '9')
      throw Error(where + ": not an integer: '" + s + "'");
  }
  return std::stoll(s);
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw Error(where + ": not a number: '" + s + "'");
  }
  if (pos != s.size()) throw Error(where + ": not a number: '" + s + "'");
  return v;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  for (const auto& l : lines) out << l << "\n";
}

}  // namespace mvgp
