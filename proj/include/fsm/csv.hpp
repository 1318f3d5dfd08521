#pragma once

// Minimal CSV support: header + rows, comma separated, no quoting rules.
// Cells are kept verbatim (CR stripped); numeric interpretation happens at
// the call site so error messages can name the offending row and column.
// Doubles are written with std::to_chars shortest round-trip form, which
// keeps rewritten files byte-stable for identical values.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fsm::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline Table read_stream(std::istream& in, const std::string& name) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      t.header = split_line(line);
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      throw std::invalid_argument(name + ": line " + std::to_string(lineno) +
                                  " has " + std::to_string(cells.size()) +
                                  " fields, expected " +
                                  std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (lineno == 0) throw std::invalid_argument(name + ": file is empty");
  return t;
}

inline Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return read_stream(in, path.filename().string());
}

// Strict numeric cell parse: optional surrounding spaces, full-token match,
// finite values only.
inline bool parse_double(std::string_view cell, double& out) {
  std::size_t b = 0, e = cell.size();
  while (b < e && (cell[b] == ' ' || cell[b] == '\t')) ++b;
  while (e > b && (cell[e - 1] == ' ' || cell[e - 1] == '\t')) --e;
  if (b == e) return false;
  const char* first = cell.data() + b;
  const char* last = cell.data() + e;
  auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last) return false;
  return out == out && out <= 1.7976931348623157e308 &&
         out >= -1.7976931348623157e308;
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace fsm::csv
