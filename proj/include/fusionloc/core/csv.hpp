#pragma once

#include "fusionloc/core/types.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fusionloc {

/// Numeric CSV with a header row. Values are written in shortest
/// round-trip form so reading back reproduces them bit for bit.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : os_(path), width_(header.size()) {
    if (!os_) fail(ErrorKind::input, "cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
    os_ << '\n';
  }

  void row(const std::vector<double>& values) {
    if (values.size() != width_) fail(ErrorKind::input, "csv: row width mismatch");
    char buf[32];
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) os_ << ',';
      const auto r = std::to_chars(buf, buf + sizeof buf, values[i]);
      os_.write(buf, r.ptr - buf);
    }
    os_ << '\n';
  }

 private:
  std::ofstream os_;
  std::size_t width_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorKind::input, "csv: missing column " + name);
  }
  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::input, "cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::input, "csv: empty file " + path);
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(t.header.size());
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      const auto r = std::from_chars(p, comma, v);
      if (r.ec != std::errc() || r.ptr != comma)
        fail(ErrorKind::input, path + ":" + std::to_string(lineno) + ": bad number");
      row.push_back(v);
      p = comma + 1;
    }
    if (row.size() != t.header.size())
      fail(ErrorKind::input, path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                                 " columns");
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace fusionloc
