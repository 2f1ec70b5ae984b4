#include "fairmarket/csv.hpp"

#include <cctype>
#include <cstdlib>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "fairmarket/errors.hpp"

namespace fairmarket {

std::string format_kwh(Energy e) {
  const std::int64_t m = e.micro();
  const std::int64_t a = m < 0 ? -m : m;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%lld.%06lld", m < 0 ? "-" : "",
                static_cast<long long>(a / 1000000), static_cast<long long>(a % 1000000));
  return buf;
}

namespace csv {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError("missing CSV column '" + std::string(name) + "'");
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Table table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (table.header.empty()) {
      table.header = split_line(line);
      continue;
    }
    auto fields = split_line(line);
    if (fields.size() != table.header.size()) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(table.header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (table.header.empty()) throw IoError(path.string() + ": empty file");
  return table;
}

double parse_double(std::string_view text, std::string_view what) {
  text = trim(text);
  std::string buf(text);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size()) {
    throw IoError("invalid number '" + buf + "' for " + std::string(what));
  }
  return v;
}

long long parse_int(std::string_view text, std::string_view what) {
  text = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError("invalid integer '" + std::string(text) + "' for " + std::string(what));
  }
  return v;
}

Energy parse_energy(std::string_view text, std::string_view what) {
  const std::string original(trim(text));
  std::string_view s = original;
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  const auto dot = s.find('.');
  const std::string_view whole = s.substr(0, dot);
  std::string_view frac = dot == s.npos ? std::string_view{} : s.substr(dot + 1);
  auto digits = [](std::string_view d) {
    for (char c : d) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    return true;
  };
  if ((whole.empty() && frac.empty()) || !digits(whole) || !digits(frac) || frac.size() > 6 ||
      (s.find_first_of("eE") != s.npos)) {
    // Fall back to rounding for exponent notation or excess precision.
    return Energy::from_kwh(parse_double(original, what));
  }
  long long w = 0;
  if (!whole.empty()) w = parse_int(whole, what);
  long long f = 0;
  if (!frac.empty()) {
    f = parse_int(frac, what);
    for (std::size_t i = frac.size(); i < 6; ++i) f *= 10;
  }
  const long long micro = w * 1000000LL + f;
  return Energy::from_micro(negative ? -micro : micro);
}

}  // namespace csv
}  // namespace fairmarket
