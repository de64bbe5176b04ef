#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace qkdblind {

/// Header-addressed CSV table. Blank lines and lines starting with '#' are
/// skipped; the first remaining line is the header.
class CsvTable {
 public:
  static CsvTable parse(std::istream& in, std::string_view source = "csv");
  static CsvTable load(const std::string& path);

  /// Column index; throws ConfigError naming the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;

  std::size_t rows() const { return rows_.size(); }
  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  double number(std::size_t row, std::size_t col) const;

  const std::vector<std::string>& header() const { return header_; }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest round-trippable decimal form of `v` ("inf" / "nan" for specials).
std::string format_number(double v);

}  // namespace qkdblind
