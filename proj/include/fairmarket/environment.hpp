#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fairmarket/auction.hpp"
#include "fairmarket/profiles.hpp"
#include "fairmarket/rng.hpp"
#include "fairmarket/units.hpp"

namespace fairmarket::env {

using profiles::HouseholdSpec;

inline constexpr int kObservationSize = 7;

/// Factored action heads, in policy-output order.
enum Head : int { ask_price = 0, ask_qty, bid_price, bid_qty, storage_op, storage_frac, kNumHeads };
using HeadSizes = std::array<int, kNumHeads>;
using HeadMask = std::uint8_t;

enum class StorageOp : int { idle = 0, charge = 1, discharge = 2 };

struct Action {
  int ask_price_idx = 0;
  int ask_qty_frac_idx = 0;
  int bid_price_idx = 0;
  int bid_qty_frac_idx = 0;
  StorageOp storage_op = StorageOp::idle;
  int storage_frac_idx = 0;

  std::array<int, kNumHeads> indices() const;
  static Action from_indices(const std::array<int, kNumHeads>& idx);
};

struct MarketConfig {
  std::vector<HouseholdSpec> households;
  auction::Tariffs tariffs{30, 10};
  auction::PriceBand band{10, 30};
  std::vector<double> quantity_menu{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> storage_menu{0.25, 0.5, 1.0};
  double alpha = 0.37;
  double p_sunny = 0.7;
  profiles::NoiseConfig noise;
  /// Evaluation horizon D; also the normalizer of the day feature.
  int horizon_days = 30;
  double initial_soc_frac = 0.5;
  bool learned_consumers = false;
  /// Multipliers on every realized load / PV value (counterfactual shocks).
  /// Observation normalizers keep using the nominal peaks.
  double load_scale = 1.0;
  double pv_scale = 1.0;
  profiles::Templates templates;
  std::shared_ptr<const profiles::EmpiricalProfiles> empirical;

  /// Throws ConfigError on any inconsistency.
  void validate() const;

  int num_agents() const { return static_cast<int>(households.size()); }
  int num_price_levels() const { return band.max - band.min + 1; }
  Cents price_at(int idx) const { return band.min + idx; }
  /// Consumers bid at the retail tariff, capped to the band.
  Cents consumer_bid_price() const { return std::min(tariffs.retail, band.max); }
  /// Menu sizes for an agent; heads an agent cannot use collapse to size 1.
  HeadSizes head_sizes(AgentId agent) const;
  bool learns(AgentId agent) const;
};

struct AgentState {
  Energy load;  // true L
  Energy pv;    // true G
  double load_forecast = 0.0;
  double pv_forecast = 0.0;
  double soc = 0.0;
};

struct EpisodeState {
  int slot = 0;
  int start_day = 0;
  int days = 1;
  profiles::WeatherDay weather;
  std::vector<AgentState> agents;
  Rng weather_rng;
  std::vector<Rng> agent_rngs;

  int hour() const { return slot % profiles::kHoursPerDay; }
  /// Absolute day index d_t (training episodes start at an offset).
  int day() const { return start_day + slot / profiles::kHoursPerDay; }
  int horizon_slots() const { return days * profiles::kHoursPerDay; }
};

struct Observation {
  /// L-hat - G-hat, L-hat, G-hat, s*B, h, kappa, d before normalization.
  std::array<double, kObservationSize> raw{};
  std::array<double, kObservationSize> features{};
};

struct RawRewards {
  /// pi for prosumers, -chi for consumers, in cents; indexed by agent.
  std::vector<double> cash;
  std::vector<double> profit;  // pi (prosumers only, 0 otherwise)
  std::vector<double> cost;    // chi (consumers only, 0 otherwise)
};

struct AgentStepInfo {
  Energy ask_bound;
  Energy bid_bound;
  Energy ask_qty;
  Energy bid_qty;
  Energy q_ch;
  Energy q_dis;
  Energy sold;
  Energy bought;
  /// Heads whose sampled value influenced the outcome this slot.
  HeadMask active_heads = 0;
};

struct StepResult {
  auction::SlotLedger ledger;
  RawRewards rewards;
  std::vector<AgentStepInfo> info;
  bool done = false;
};

struct StorageResult {
  double new_soc = 0.0;
  Energy q_ch;
  Energy q_dis;
};

double feasible_ask_max(double load_forecast, double pv_forecast, double q_sell_max);
double feasible_bid_max(double load_forecast, double pv_forecast, double q_buy_max);

/// Largest charge or discharge energy that satisfies the power limits and
/// keeps the SOC projection inactive.
double storage_limit(StorageOp op, double soc, const HouseholdSpec& spec);

/// Applies a requested charge/discharge energy (kWh). The request is clamped
/// so that the capacity projection never binds; non-storage agents idle.
StorageResult apply_storage(StorageOp op, double requested_kwh, double soc, const HouseholdSpec& spec);

/// Action-level wrapper: request = storage_menu[frac_idx] x storage_limit.
StorageResult apply_storage(const Action& action, double soc, const HouseholdSpec& spec,
                            std::span<const double> storage_menu);

Energy net_position(Energy load, Energy pv, Energy q_dis, Energy q_ch, bool has_storage);

/// Prosumer returns are sums of pi; consumer returns are minus sums of chi.
/// Throws std::invalid_argument when the slot count differs from `expected_slots`.
std::vector<double> episode_return(std::span<const RawRewards> slots, std::size_t expected_slots);

class Market {
 public:
  explicit Market(MarketConfig config);

  /// Starts an episode of `days` days whose first slot is day `start_day`.
  const EpisodeState& reset(std::uint64_t seed, int start_day = 0, int days = 1);

  Observation observe(AgentId agent) const;

  /// Advances one slot. `actions` holds one entry per agent; scripted
  /// consumers ignore theirs.
  StepResult step(std::span<const Action> actions);

  /// Overrides an agent's state of charge (clamped to capacity); no-op for
  /// agents without storage.
  void set_soc(AgentId agent, double soc_kwh);

  bool done() const { return state_.slot >= state_.horizon_slots(); }
  const EpisodeState& state() const { return state_; }
  const MarketConfig& config() const { return config_; }

 private:
  void realize_slot();

  MarketConfig config_;
  EpisodeState state_;
  std::shared_ptr<const std::vector<std::string>> names_;
};

/// Action used for scripted consumers: bid the full forecast demand.
Action scripted_consumer_action(const MarketConfig& config);

}  // namespace fairmarket::env
