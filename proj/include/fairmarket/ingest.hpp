#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fairmarket/csv.hpp"
#include "fairmarket/profiles.hpp"

namespace fairmarket::ingest {

/// Input column names; defaults match `timestamp,household,load_kwh,pv_kwh`.
struct Columns {
  std::string timestamp = "timestamp";
  std::string household = "household";
  std::string load = "load_kwh";
  std::string pv = "pv_kwh";
};

/// Minutes since 1970-01-01 00:00 for `YYYY-MM-DD[ T]HH:MM[:SS]`; seconds must
/// be zero. Throws std::invalid_argument on anything else.
std::int64_t parse_timestamp(std::string_view text);

struct Hourly {
  std::vector<std::string> households;  // first-appearance order
  profiles::EmpiricalProfiles series;
  std::int64_t start_minute = 0;
  Energy raw_load;
  Energy raw_pv;
};

/// Sums each aligned block of four 15-minute readings into one hour. Every
/// household must cover the same hours without gaps; the first offending row
/// is named in the IoError message.
Hourly aggregate(const csv::Table& table, const Columns& columns = {}, const std::string& source = "input");

Hourly aggregate_file(const std::filesystem::path& path, const Columns& columns = {});

/// `household,hour_index,load_kwh,pv_kwh`
void write_hourly_csv(const std::filesystem::path& path, const Hourly& hourly);

}  // namespace fairmarket::ingest
