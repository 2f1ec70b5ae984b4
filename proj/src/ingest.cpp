#include "fairmarket/ingest.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <stdexcept>

#include "fairmarket/errors.hpp"

namespace fairmarket::ingest {

namespace {

constexpr std::int64_t kStep = 15;
constexpr std::int64_t kPerHour = 4;

int digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw std::invalid_argument("truncated timestamp");
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + n, v);
  if (ec != std::errc() || p != s.data() + pos + n) throw std::invalid_argument("bad digits in timestamp");
  return v;
}

std::string format_minute(std::int64_t minute) {
  using namespace std::chrono;
  const sys_days day{days{minute / 1440}};
  const year_month_day ymd{day};
  const auto rem = minute % 1440;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 60),
                static_cast<int>(rem % 60));
  return buf;
}

struct Track {
  std::int64_t last = 0;
  std::size_t last_line = 0;
  int in_hour = 0;
  Energy load;
  Energy pv;
};

}  // namespace

std::int64_t parse_timestamp(std::string_view s) {
  while (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  if (s.size() != 16 && s.size() != 19) throw std::invalid_argument("expected YYYY-MM-DD HH:MM[:SS]");
  if (s[4] != '-' || s[7] != '-' || (s[10] != ' ' && s[10] != 'T') || s[13] != ':') {
    throw std::invalid_argument("expected YYYY-MM-DD HH:MM[:SS]");
  }
  const int y = digits(s, 0, 4);
  const int mo = digits(s, 5, 2);
  const int d = digits(s, 8, 2);
  const int h = digits(s, 11, 2);
  const int mi = digits(s, 14, 2);
  if (s.size() == 19) {
    if (s[16] != ':') throw std::invalid_argument("expected YYYY-MM-DD HH:MM[:SS]");
    if (digits(s, 17, 2) != 0) throw std::invalid_argument("seconds must be zero");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59) throw std::invalid_argument("calendar field out of range");
  const auto days_since = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days_since) * 1440 + h * 60 + mi;
}

Hourly aggregate(const csv::Table& table, const Columns& columns, const std::string& source) {
  const auto c_ts = table.column(columns.timestamp);
  const auto c_house = table.column(columns.household);
  const auto c_load = table.column(columns.load);
  const auto c_pv = table.column(columns.pv);

  Hourly out;
  std::map<std::string, Track> tracks;
  std::int64_t start = 0;
  bool have_start = false;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    auto fail = [&](const std::string& what) {
      return IoError(source + ":" + std::to_string(line) + ": " + what);
    };
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(row[c_ts]);
    } catch (const std::invalid_argument& e) {
      throw fail("bad timestamp '" + row[c_ts] + "' (" + e.what() + ")");
    }
    if (ts % kStep != 0) throw fail("timestamp " + row[c_ts] + " is not on a 15-minute boundary");
    Energy load, pv;
    try {
      load = csv::parse_energy(row[c_load], columns.load);
      pv = csv::parse_energy(row[c_pv], columns.pv);
    } catch (const IoError& e) {
      throw fail(e.what());
    }
    if (load < Energy{} || pv < Energy{}) throw fail("negative energy reading");

    const std::string& house = row[c_house];
    if (house.empty()) throw fail("empty household id");
    auto it = tracks.find(house);
    if (it == tracks.end()) {
      if (!have_start) {
        if (ts % (kStep * kPerHour) != 0) throw fail("first reading " + row[c_ts] + " does not start an hour");
        start = ts;
        have_start = true;
      }
      if (ts != start) {
        throw fail("household '" + house + "' starts at " + row[c_ts] + ", expected " + format_minute(start));
      }
      it = tracks.emplace(house, Track{ts - kStep, line, 0, {}, {}}).first;
      out.households.push_back(house);
      out.series[house];
    }
    auto& t = it->second;
    if (ts == t.last) throw fail("duplicate reading for '" + house + "' at " + row[c_ts]);
    if (ts < t.last) throw fail("timestamps are not sorted for '" + house + "' (" + row[c_ts] + ")");
    if (ts != t.last + kStep) {
      throw fail("gap for '" + house + "': missing reading at " + format_minute(t.last + kStep));
    }
    t.last = ts;
    t.last_line = line;
    t.load += load;
    t.pv += pv;
    out.raw_load += load;
    out.raw_pv += pv;
    if (++t.in_hour == kPerHour) {
      auto& s = out.series[house];
      s.load.push_back(t.load);
      s.pv.push_back(t.pv);
      t.in_hour = 0;
      t.load = {};
      t.pv = {};
    }
  }
  if (tracks.empty()) throw IoError(source + ": no readings");
  std::size_t hours = 0;
  bool first = true;
  for (const auto& house : out.households) {
    const auto& t = tracks.at(house);
    if (t.in_hour != 0) {
      throw IoError(source + ":" + std::to_string(t.last_line) + ": incomplete final hour for '" + house +
                    "': missing reading at " + format_minute(t.last + kStep));
    }
    const auto n = out.series.at(house).load.size();
    if (first) {
      hours = n;
      first = false;
    } else if (n != hours) {
      throw IoError(source + ":" + std::to_string(t.last_line) + ": household '" + house + "' covers " +
                    std::to_string(n) + " hours, expected " + std::to_string(hours));
    }
  }
  out.start_minute = start;
  return out;
}

Hourly aggregate_file(const std::filesystem::path& path, const Columns& columns) {
  return aggregate(csv::read(path), columns, path.string());
}

void write_hourly_csv(const std::filesystem::path& path, const Hourly& hourly) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "household,hour_index,load_kwh,pv_kwh\n";
  for (const auto& house : hourly.households) {
    const auto& s = hourly.series.at(house);
    for (std::size_t h = 0; h < s.load.size(); ++h) {
      out << house << ',' << h << ',' << format_kwh(s.load[h]) << ',' << format_kwh(s.pv[h]) << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fairmarket::ingest
