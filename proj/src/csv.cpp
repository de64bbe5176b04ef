#include "qkdblind/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "qkdblind/error.hpp"

namespace qkdblind {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

CsvTable CsvTable::parse(std::istream& in, std::string_view source) {
  CsvTable t;
  t.source_ = std::string(source);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    auto fields = split(content);
    if (t.header_.empty()) {
      t.header_ = std::move(fields);
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw ConfigError(t.source_ + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header_.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    t.rows_.push_back(std::move(fields));
  }
  if (t.header_.empty()) throw ConfigError(t.source_ + ": empty table");
  return t;
}

CsvTable CsvTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  return parse(in, path);
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header_) {
    if (h == name) return true;
  }
  return false;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw ConfigError(source_ + ": missing column '" + std::string(name) + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const auto& s = rows_.at(row).at(col);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(source_ + ": row " + std::to_string(row + 1) + ", column '" +
                      header_[col] + "': not a number: '" + s + "'");
  }
  return v;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace qkdblind
