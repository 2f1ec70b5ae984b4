#include "fairmarket/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fairmarket/csv.hpp"
#include "fairmarket/errors.hpp"

namespace fairmarket::profiles {

ProfileTemplate ProfileTemplate::from_values(const std::array<double, kHoursPerDay>& values) {
  double peak = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("profile template values must be finite and >= 0");
    peak = std::max(peak, v);
  }
  if (std::abs(peak - 1.0) > 1e-9) throw ConfigError("profile template must have unit peak");
  ProfileTemplate t;
  t.values_ = values;
  return t;
}

const ProfileTemplate& default_load_template() {
  static const ProfileTemplate t = ProfileTemplate::from_values({
      0.40, 0.33, 0.30, 0.30, 0.25, 0.30, 0.42, 0.55,  // 00-07
      0.50, 0.42, 0.38, 0.37, 0.40, 0.38, 0.37, 0.40,  // 08-15
      0.50, 0.70, 1.00, 1.00, 0.85, 0.70, 0.55, 0.45,  // 16-23
  });
  return t;
}

const ProfileTemplate& default_pv_template() {
  static const ProfileTemplate t = [] {
    std::array<double, kHoursPerDay> v{};
    for (int h = 6; h <= 18; ++h) {
      const double s = std::sin(std::numbers::pi * (h - 6) / 12.0);
      v[static_cast<std::size_t>(h)] = std::pow(std::max(0.0, s), 1.5);
    }
    v[12] = 1.0;  // sin(pi/2)^1.5 exactly, not 1 - ulp
    return ProfileTemplate::from_values(v);
  }();
  return t;
}

Templates load_templates_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_hour = table.column("hour");
  const auto c_load = table.column("phi_load");
  const auto c_pv = table.column("phi_pv");
  if (table.rows.size() != kHoursPerDay) {
    throw ConfigError(path.string() + ": template file needs exactly 24 rows");
  }
  std::array<double, kHoursPerDay> load{};
  std::array<double, kHoursPerDay> pv{};
  std::array<bool, kHoursPerDay> seen{};
  for (const auto& row : table.rows) {
    const auto h = csv::parse_int(row[c_hour], "hour");
    if (h < 0 || h >= kHoursPerDay || seen[static_cast<std::size_t>(h)]) {
      throw ConfigError(path.string() + ": bad or duplicate hour " + row[c_hour]);
    }
    seen[static_cast<std::size_t>(h)] = true;
    load[static_cast<std::size_t>(h)] = csv::parse_double(row[c_load], "phi_load");
    pv[static_cast<std::size_t>(h)] = csv::parse_double(row[c_pv], "phi_pv");
  }
  return Templates{ProfileTemplate::from_values(load), ProfileTemplate::from_values(pv)};
}

void HouseholdSpec::validate() const {
  auto fail = [&](const std::string& what) { throw ConfigError("household '" + id + "': " + what); };
  if (id.empty()) throw ConfigError("household id must be non-empty");
  if (!(peak_load >= 0.0) || !(peak_pv >= 0.0)) fail("peaks must be >= 0");
  if (role == Role::consumer && (pv_owner || has_storage)) fail("consumers cannot own PV or storage");
  if (has_storage && !(batt_capacity > 0.0)) fail("storage requires batt_capacity > 0");
  if (!(eta_c > 0.0 && eta_c <= 1.0) || !(eta_d > 0.0 && eta_d <= 1.0)) fail("efficiencies must lie in (0, 1]");
  if (!(batt_p_ch_max >= 0.0) || !(batt_p_dis_max >= 0.0)) fail("power limits must be >= 0");
  if (!(q_sell_max >= 0.0) || !(q_buy_max >= 0.0)) fail("menu caps must be >= 0");
}

void NoiseConfig::validate() const {
  if (!(load_sigma >= 0.0) || !(pv_sigma >= 0.0) || !(forecast_sigma >= 0.0)) {
    throw ConfigError("noise sigmas must be >= 0");
  }
}

EmpiricalProfiles load_empirical_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_house = table.column("household");
  const auto c_index = table.column("hour_index");
  const auto c_load = table.column("load_kwh");
  const auto c_pv = table.column("pv_kwh");
  EmpiricalProfiles out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto& series = out[row[c_house]];
    const auto idx = csv::parse_int(row[c_index], "hour_index");
    if (idx != static_cast<long long>(series.load.size())) {
      throw IoError(path.string() + ":" + std::to_string(table.line_numbers[r]) +
                    ": hour_index out of sequence");
    }
    series.load.push_back(csv::parse_energy(row[c_load], "load_kwh"));
    series.pv.push_back(csv::parse_energy(row[c_pv], "pv_kwh"));
  }
  return out;
}

double intensity(bool sunny, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  return alpha + (1.0 - alpha) * (sunny ? 1.0 : 0.0);
}

namespace {

// Log-normal multiplier with mean exactly 1 and relative s.d. sigma.
double lognormal_multiplier(double sigma, Rng& rng) {
  const double var_ln = std::log1p(sigma * sigma);
  std::lognormal_distribution<double> dist(-0.5 * var_ln, std::sqrt(var_ln));
  return dist(rng);
}

}  // namespace

double realize_load(const HouseholdSpec& spec, int hour, const ProfileTemplate& load,
                    const NoiseConfig& noise, Rng& rng) {
  const double base = spec.peak_load * load.at(hour);
  if (!noise.enabled) return base;
  return base * lognormal_multiplier(noise.load_sigma, rng);
}

double realize_load(const HouseholdSpec& spec, int hour, const NoiseConfig& noise, Rng& rng) {
  return realize_load(spec, hour, default_load_template(), noise, rng);
}

double realize_pv(const HouseholdSpec& spec, int hour, double kappa, const ProfileTemplate& pv,
                  const NoiseConfig& noise, Rng& rng) {
  if (!spec.pv_owner) return 0.0;
  const double base = spec.peak_pv * kappa * pv.at(hour);
  if (!noise.enabled || base == 0.0) return base;
  return base * lognormal_multiplier(noise.pv_sigma, rng);
}

double realize_pv(const HouseholdSpec& spec, int hour, double kappa, const NoiseConfig& noise,
                  Rng& rng) {
  return realize_pv(spec, hour, kappa, default_pv_template(), noise, rng);
}

double forecast(double true_value, const NoiseConfig& noise, Rng& rng) {
  if (!noise.enabled || true_value == 0.0) return true_value;
  std::normal_distribution<double> eps(1.0, noise.forecast_sigma);
  return std::max(0.0, true_value * eps(rng));
}

bool sample_weather(double p_sunny, Rng& rng) {
  if (!(p_sunny >= 0.0 && p_sunny <= 1.0)) throw ConfigError("p_sunny must lie in [0, 1]");
  std::bernoulli_distribution sunny(p_sunny);
  return sunny(rng);
}

}  // namespace fairmarket::profiles
