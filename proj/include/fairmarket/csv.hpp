#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fairmarket/units.hpp"

namespace fairmarket::csv {

/// Minimal comma-separated reader: no quoting, surrounding whitespace trimmed.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  /// Index of a header column; throws IoError when absent.
  std::size_t column(std::string_view name) const;
};

std::vector<std::string> split_line(std::string_view line);

/// Throws IoError when the file cannot be opened or is empty.
Table read(const std::filesystem::path& path);

double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

/// Parses a decimal string exactly into micro-kWh (up to six fractional digits).
Energy parse_energy(std::string_view text, std::string_view what);

}  // namespace fairmarket::csv
