#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairmarket/auction.hpp"
#include "fairmarket/profiles.hpp"
#include "json.hpp"

namespace fairmarket::metrics {

/// Jain's fairness index (sum x)^2 / (n sum x^2); 1 for an all-zero vector.
/// Throws std::invalid_argument on an empty or negative input.
double jfi(std::span<const double> x);

/// Shannon entropy of the normalized positive shares divided by ln(k), k the
/// number of positive shares; 0 when k <= 1.
double seller_entropy(std::span<const double> shares);

/// max - min of the executed peer prices; 0 with fewer than two trades.
double price_spread(const auction::SlotLedger& ledger);

struct EnergySplit {
  Energy peer;
  Energy grid;  // imports + exports
  std::optional<double> peer_share;
};

EnergySplit energy_split(std::span<const auction::SlotLedger> ledgers);

struct AgentEconomics {
  std::string id;
  bool prosumer = true;
  double net_cash_cents = 0.0;  // profit for prosumers, minus cost for consumers
  double peer_spend_cents = 0.0;
  double peer_revenue_cents = 0.0;
  double grid_spend_cents = 0.0;
  double grid_revenue_cents = 0.0;
  double peer_bought_kwh = 0.0;
  double grid_import_kwh = 0.0;
  double peer_sold_kwh = 0.0;
  double grid_export_kwh = 0.0;

  double total_cost_cents() const { return -net_cash_cents; }
  /// Net cost per kWh acquired; nullopt when nothing was acquired.
  std::optional<double> avg_cost_per_kwh() const;
};

struct GridEconomics {
  double revenue_cents = 0.0;
  double cost_cents = 0.0;
  double net_cents = 0.0;
};

struct Economics {
  std::vector<AgentEconomics> agents;
  GridEconomics grid;
  double prosumer_profit_cents = 0.0;
  double consumer_cost_cents = 0.0;
  /// Exact closed-economy residual (agents + grid), micro-cents.
  std::int64_t imbalance_micro_cents = 0;
};

Economics economics(std::span<const auction::SlotLedger> ledgers, std::span<const profiles::HouseholdSpec> households);

struct HourRow {
  int hour = 0;  // slot index within the evaluated horizon
  double spread_cents = 0.0;
  double entropy = 0.0;
  double jfi = 1.0;
  double peer_kwh = 0.0;
  double grid_kwh = 0.0;
};

struct MarketReport {
  EnergySplit split;
  double grid_import_kwh = 0.0;
  double grid_export_kwh = 0.0;
  std::vector<HourRow> hours;
  Economics economics;
  /// Averaged over hours with at least one peer sale.
  double mean_entropy = 0.0;
  double min_jfi = 1.0;
  double share_jfi_above_090 = 1.0;
  /// Slot-averaged deterministic fairness scores (vacuous slots count as 1).
  double mean_ftg = 1.0;
  double mean_fbs = 1.0;
  double mean_fpp = 1.0;
};

MarketReport build_report(std::span<const auction::SlotLedger> ledgers,
                          std::span<const profiles::HouseholdSpec> households);

nlohmann::json to_json(const MarketReport& report);
/// `hour,spread_cents,entropy,jfi,peer_kwh,grid_kwh`
void write_hourly_csv(const std::filesystem::path& path, const MarketReport& report);

/// The six radar axes of a counterfactual comparison.
struct RadarAxes {
  double peer_trades_kwh = 0.0;
  double grid_trades_kwh = 0.0;
  double consumer_cost_cents = 0.0;
  double prosumer_profit_cents = 0.0;
  double mean_entropy = 0.0;
  double grid_net_profit_cents = 0.0;
};

RadarAxes radar_axes(const MarketReport& report);

inline constexpr const char* kRadarAxisNames[6] = {"peer_trades",     "grid_trades",  "consumer_cost",
                                                    "prosumer_profit", "mean_entropy", "grid_net_profit"};

std::array<double, 6> axis_values(const RadarAxes& axes);

/// counterfactual / baseline per axis; 1 when both are 0, nullopt when only
/// the baseline is 0.
std::array<std::optional<double>, 6> axis_ratios(const RadarAxes& baseline, const RadarAxes& counterfactual);

}  // namespace fairmarket::metrics
