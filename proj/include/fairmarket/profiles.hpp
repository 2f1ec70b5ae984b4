#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fairmarket/rng.hpp"
#include "fairmarket/units.hpp"

namespace fairmarket::profiles {

inline constexpr int kHoursPerDay = 24;

struct WeatherDay {
  bool sunny = true;
  double intensity = 1.0;
};

/// 24 non-negative hourly samples with unit peak.
class ProfileTemplate {
 public:
  /// Throws ConfigError unless the values are finite, non-negative and peak at 1.
  static ProfileTemplate from_values(const std::array<double, kHoursPerDay>& values);

  double at(int hour) const { return values_.at(static_cast<std::size_t>(hour)); }
  const std::array<double, kHoursPerDay>& values() const { return values_; }

 private:
  std::array<double, kHoursPerDay> values_{};
};

/// Bimodal residential load: overnight floor 0.25, morning shoulder at 07:00,
/// evening plateau at 18:00-19:00.
const ProfileTemplate& default_load_template();
/// max(0, sin(pi (h-6)/12))^1.5 on [6, 18], zero at night.
const ProfileTemplate& default_pv_template();

struct Templates {
  ProfileTemplate load = default_load_template();
  ProfileTemplate pv = default_pv_template();
};

/// Reads a `hour,phi_load,phi_pv` CSV with exactly 24 data rows.
Templates load_templates_csv(const std::filesystem::path& path);

enum class Role { prosumer, consumer };

struct HouseholdSpec {
  std::string id;
  Role role = Role::prosumer;
  double peak_load = 2.0;  // kW
  double peak_pv = 0.0;    // kW
  bool pv_owner = false;
  bool has_storage = false;
  double batt_capacity = 0.0;   // kWh
  double batt_p_ch_max = 0.0;   // kW
  double batt_p_dis_max = 0.0;  // kW
  double eta_c = 0.95;
  double eta_d = 0.95;
  double q_sell_max = 10.0;  // kWh per slot
  double q_buy_max = 10.0;   // kWh per slot

  bool is_prosumer() const { return role == Role::prosumer; }
  /// Throws ConfigError when the household invariants do not hold.
  void validate() const;
};

struct NoiseConfig {
  double load_sigma = 0.05;
  double pv_sigma = 0.05;
  double forecast_sigma = 0.05;
  bool enabled = true;

  void validate() const;
};

/// Per-household hourly series replacing template realization.
struct EmpiricalSeries {
  std::vector<Energy> load;
  std::vector<Energy> pv;
};
using EmpiricalProfiles = std::map<std::string, EmpiricalSeries>;

/// Reads the hourly CSV written by `fairmarket ingest`.
EmpiricalProfiles load_empirical_csv(const std::filesystem::path& path);

double intensity(bool sunny, double alpha);

double realize_load(const HouseholdSpec& spec, int hour, const ProfileTemplate& load,
                    const NoiseConfig& noise, Rng& rng);
double realize_load(const HouseholdSpec& spec, int hour, const NoiseConfig& noise, Rng& rng);

double realize_pv(const HouseholdSpec& spec, int hour, double kappa, const ProfileTemplate& pv,
                  const NoiseConfig& noise, Rng& rng);
double realize_pv(const HouseholdSpec& spec, int hour, double kappa, const NoiseConfig& noise,
                  Rng& rng);

/// One-step-ahead forecast with multiplicative N(1, sigma^2) error, floored at 0.
double forecast(double true_value, const NoiseConfig& noise, Rng& rng);

bool sample_weather(double p_sunny, Rng& rng);

}  // namespace fairmarket::profiles
