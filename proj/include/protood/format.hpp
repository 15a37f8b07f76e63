#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace protood {

/// printf("%.9g"), the precision of every score column.
std::string format_g9(double v);

/// Fixed-point with `decimals` digits after the point.
std::string format_fixed(double v, int decimals);

/// Parses "1,2.5,3" into doubles. Throws ConfigError on malformed items.
std::vector<double> parse_double_list(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);

/// Minimal reader for the comma-separated tables this project writes
/// (no quoting). Every row must have as many cells as the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // ConfigError if absent
  std::vector<double> numeric_column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace protood
