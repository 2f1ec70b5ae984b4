#include "fairmarket/environment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fairmarket/errors.hpp"

namespace fairmarket::env {

using profiles::kHoursPerDay;

std::array<int, kNumHeads> Action::indices() const {
  return {ask_price_idx, ask_qty_frac_idx, bid_price_idx, bid_qty_frac_idx, static_cast<int>(storage_op),
          storage_frac_idx};
}

Action Action::from_indices(const std::array<int, kNumHeads>& idx) {
  Action a;
  a.ask_price_idx = idx[Head::ask_price];
  a.ask_qty_frac_idx = idx[Head::ask_qty];
  a.bid_price_idx = idx[Head::bid_price];
  a.bid_qty_frac_idx = idx[Head::bid_qty];
  a.storage_op = static_cast<StorageOp>(idx[Head::storage_op]);
  a.storage_frac_idx = idx[Head::storage_frac];
  return a;
}

void MarketConfig::validate() const {
  if (households.empty()) throw ConfigError("scenario needs at least one household");
  std::vector<std::string> ids;
  for (const auto& h : households) {
    h.validate();
    ids.push_back(h.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ConfigError("household ids must be unique");
  if (!(band.min > 0 && band.min < band.max)) throw ConfigError("price band must satisfy 0 < min < max");
  if (tariffs.feed_in > tariffs.retail) throw ConfigError("feed-in tariff exceeds retail tariff");
  if (tariffs.feed_in > band.min) throw ConfigError("feed-in tariff must not exceed the band minimum");
  if (tariffs.retail < band.max) throw ConfigError("retail tariff must not be below the band maximum");
  if (quantity_menu.empty() || storage_menu.empty()) throw ConfigError("menus must be non-empty");
  for (double f : quantity_menu) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("quantity menu fractions must lie in [0, 1]");
  }
  for (double f : storage_menu) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("storage menu fractions must lie in (0, 1]");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(p_sunny >= 0.0 && p_sunny <= 1.0)) throw ConfigError("p_sunny must lie in [0, 1]");
  noise.validate();
  if (horizon_days < 1) throw ConfigError("horizon_days must be >= 1");
  if (!(initial_soc_frac >= 0.0 && initial_soc_frac <= 1.0)) throw ConfigError("initial_soc_frac must lie in [0, 1]");
  if (!(load_scale >= 0.0) || !(pv_scale >= 0.0)) throw ConfigError("scales must be >= 0");
}

HeadSizes MarketConfig::head_sizes(AgentId agent) const {
  const auto& h = households.at(static_cast<std::size_t>(agent));
  const int prices = num_price_levels();
  const int qty = static_cast<int>(quantity_menu.size());
  if (!h.is_prosumer()) return {1, 1, 1, qty, 1, 1};
  if (!h.has_storage) return {prices, qty, prices, qty, 1, 1};
  return {prices, qty, prices, qty, 3, static_cast<int>(storage_menu.size())};
}

bool MarketConfig::learns(AgentId agent) const {
  return households.at(static_cast<std::size_t>(agent)).is_prosumer() || learned_consumers;
}

double feasible_ask_max(double load_forecast, double pv_forecast, double q_sell_max) {
  return std::min(q_sell_max, std::max(0.0, pv_forecast - load_forecast));
}

double feasible_bid_max(double load_forecast, double pv_forecast, double q_buy_max) {
  return std::min(q_buy_max, std::max(0.0, load_forecast - pv_forecast));
}

double storage_limit(StorageOp op, double soc, const HouseholdSpec& spec) {
  if (!spec.has_storage) return 0.0;
  switch (op) {
    case StorageOp::charge:
      return std::max(0.0, std::min(spec.batt_p_ch_max, (spec.batt_capacity - soc) / spec.eta_c));
    case StorageOp::discharge:
      return std::max(0.0, std::min(spec.batt_p_dis_max, spec.eta_d * soc));
    case StorageOp::idle:
      break;
  }
  return 0.0;
}

StorageResult apply_storage(StorageOp op, double requested_kwh, double soc, const HouseholdSpec& spec) {
  StorageResult r;
  r.new_soc = soc;
  if (!spec.has_storage || op == StorageOp::idle || !(requested_kwh > 0.0)) return r;
  const Energy q = Energy::floor_kwh(std::min(requested_kwh, storage_limit(op, soc, spec)));
  double next = soc;
  if (op == StorageOp::charge) {
    r.q_ch = q;
    next += spec.eta_c * q.kwh();
  } else {
    r.q_dis = q;
    next -= q.kwh() / spec.eta_d;
  }
  r.new_soc = std::clamp(next, 0.0, spec.batt_capacity);
  return r;
}

StorageResult apply_storage(const Action& action, double soc, const HouseholdSpec& spec,
                            std::span<const double> storage_menu) {
  if (!spec.has_storage || action.storage_op == StorageOp::idle) return apply_storage(StorageOp::idle, 0.0, soc, spec);
  const double frac = storage_menu[static_cast<std::size_t>(action.storage_frac_idx)];
  return apply_storage(action.storage_op, frac * storage_limit(action.storage_op, soc, spec), soc, spec);
}

Energy net_position(Energy load, Energy pv, Energy q_dis, Energy q_ch, bool has_storage) {
  Energy n = load - pv;
  if (has_storage) n = n - q_dis + q_ch;
  return n;
}

std::vector<double> episode_return(std::span<const RawRewards> slots, std::size_t expected_slots) {
  if (slots.size() != expected_slots) {
    throw std::invalid_argument("episode_return: expected " + std::to_string(expected_slots) + " slots, got " +
                                std::to_string(slots.size()));
  }
  std::vector<double> total;
  for (const auto& s : slots) {
    if (total.empty()) total.assign(s.cash.size(), 0.0);
    if (s.cash.size() != total.size()) throw std::invalid_argument("episode_return: agent count changed");
    for (std::size_t a = 0; a < total.size(); ++a) total[a] += s.cash[a];
  }
  return total;
}

Action scripted_consumer_action(const MarketConfig& config) {
  Action a;
  a.bid_qty_frac_idx = static_cast<int>(config.quantity_menu.size()) - 1;
  return a;
}

Market::Market(MarketConfig config) : config_(std::move(config)) {
  config_.validate();
  auto names = std::make_shared<std::vector<std::string>>();
  for (const auto& h : config_.households) names->push_back(h.id);
  names_ = std::move(names);
}

const EpisodeState& Market::reset(std::uint64_t seed, int start_day, int days) {
  if (days < 1 || start_day < 0) throw ConfigError("episode needs days >= 1 and start_day >= 0");
  const auto n = config_.households.size();
  state_ = EpisodeState{};
  state_.start_day = start_day;
  state_.days = days;
  state_.weather_rng = derive_stream(seed, StreamTag::weather);
  state_.agent_rngs.clear();
  for (std::size_t a = 0; a < n; ++a) state_.agent_rngs.push_back(derive_stream(seed, StreamTag::household, {a}));
  state_.agents.assign(n, AgentState{});
  for (std::size_t a = 0; a < n; ++a) {
    const auto& h = config_.households[a];
    if (h.has_storage) state_.agents[a].soc = config_.initial_soc_frac * h.batt_capacity;
  }
  const bool sunny = profiles::sample_weather(config_.p_sunny, state_.weather_rng);
  state_.weather = {sunny, profiles::intensity(sunny, config_.alpha)};
  realize_slot();
  return state_;
}

void Market::set_soc(AgentId agent, double soc_kwh) {
  const auto& h = config_.households.at(static_cast<std::size_t>(agent));
  if (!h.has_storage) return;
  state_.agents.at(static_cast<std::size_t>(agent)).soc = std::clamp(soc_kwh, 0.0, h.batt_capacity);
}

void Market::realize_slot() {
  const int hour = state_.hour();
  const long absolute_hour = static_cast<long>(state_.day()) * kHoursPerDay + hour;
  for (std::size_t a = 0; a < config_.households.size(); ++a) {
    const auto& h = config_.households[a];
    auto& st = state_.agents[a];
    auto& rng = state_.agent_rngs[a];
    double load = 0.0;
    double pv = 0.0;
    const profiles::EmpiricalSeries* series = nullptr;
    if (config_.empirical) {
      const auto it = config_.empirical->find(h.id);
      if (it != config_.empirical->end() && !it->second.load.empty()) series = &it->second;
    }
    if (series) {
      const auto idx = static_cast<std::size_t>(absolute_hour % static_cast<long>(series->load.size()));
      load = series->load[idx].kwh();
      pv = h.pv_owner ? series->pv[idx].kwh() : 0.0;
    } else {
      load = profiles::realize_load(h, hour, config_.templates.load, config_.noise, rng);
      pv = profiles::realize_pv(h, hour, state_.weather.intensity, config_.templates.pv, config_.noise, rng);
    }
    st.load = Energy::from_kwh(load * config_.load_scale);
    st.pv = Energy::from_kwh(pv * config_.pv_scale);
    st.load_forecast = profiles::forecast(st.load.kwh(), config_.noise, rng);
    st.pv_forecast = profiles::forecast(st.pv.kwh(), config_.noise, rng);
  }
}

Observation Market::observe(AgentId agent) const {
  const auto& h = config_.households.at(static_cast<std::size_t>(agent));
  const auto& st = state_.agents.at(static_cast<std::size_t>(agent));
  Observation o;
  const double soc = h.has_storage ? st.soc : 0.0;
  o.raw = {st.load_forecast - st.pv_forecast,
           st.load_forecast,
           st.pv_forecast,
           soc,
           static_cast<double>(state_.hour()),
           state_.weather.intensity,
           static_cast<double>(state_.day())};
  const double pv_peak = h.pv_owner ? h.peak_pv : 0.0;
  o.features = {o.raw[0] / std::max({1.0, h.peak_load, pv_peak}),
                o.raw[1] / std::max(1.0, h.peak_load),
                o.raw[2] / std::max(1.0, pv_peak),
                h.has_storage ? soc / h.batt_capacity : 0.0,
                o.raw[4] / 23.0,
                o.raw[5],
                o.raw[6] / std::max(1.0, static_cast<double>(config_.horizon_days - 1))};
  return o;
}

namespace {

void check_index(int idx, int size, const char* what) {
  if (idx < 0 || idx >= size) throw std::out_of_range(std::string("action index out of range: ") + what);
}

}  // namespace

StepResult Market::step(std::span<const Action> actions) {
  if (done()) throw std::logic_error("step called on a finished episode");
  const auto n = config_.households.size();
  if (actions.size() != n) throw std::invalid_argument("step needs exactly one action per agent");

  StepResult result;
  result.info.assign(n, AgentStepInfo{});
  std::vector<double> next_soc(n, 0.0);
  std::vector<Action> effective(n);
  std::vector<auction::Order> asks;
  std::vector<auction::Order> bids;
  std::vector<AgentId> active_sellers;
  int ask_seq = 0;
  int bid_seq = 0;

  // (1) storage, (2) prosumer asks in agent order
  for (std::size_t a = 0; a < n; ++a) {
    const auto& h = config_.households[a];
    const auto& st = state_.agents[a];
    auto& info = result.info[a];
    next_soc[a] = st.soc;
    effective[a] = config_.learns(static_cast<AgentId>(a)) ? actions[a] : scripted_consumer_action(config_);
    const Action& act = effective[a];
    const auto sizes = config_.head_sizes(static_cast<AgentId>(a));
    const auto idx = act.indices();
    static constexpr const char* kHeadNames[] = {"ask_price", "ask_qty", "bid_price",
                                                 "bid_qty",   "storage_op", "storage_frac"};
    for (int k = 0; k < kNumHeads; ++k) {
      if (config_.learns(static_cast<AgentId>(a))) check_index(idx[static_cast<std::size_t>(k)], sizes[static_cast<std::size_t>(k)], kHeadNames[k]);
    }
    if (!h.is_prosumer()) continue;

    const auto storage = apply_storage(act, st.soc, h, config_.storage_menu);
    info.q_ch = storage.q_ch;
    info.q_dis = storage.q_dis;
    next_soc[a] = storage.new_soc;
    if (h.has_storage) {
      info.active_heads |= HeadMask{1} << storage_op;
      if (act.storage_op != StorageOp::idle && storage_limit(act.storage_op, st.soc, h) > 0.0) {
        info.active_heads |= HeadMask{1} << storage_frac;
      }
    }

    const double load_f = st.load_forecast + info.q_ch.kwh();
    const double pv_f = st.pv_forecast + info.q_dis.kwh();
    info.ask_bound = Energy::floor_kwh(feasible_ask_max(load_f, pv_f, h.q_sell_max));
    info.bid_bound = Energy::floor_kwh(feasible_bid_max(load_f, pv_f, h.q_buy_max));
    if (info.ask_bound.positive()) {
      info.active_heads |= HeadMask{1} << ask_qty;
      const double frac = config_.quantity_menu[static_cast<std::size_t>(act.ask_qty_frac_idx)];
      info.ask_qty = Energy::floor_kwh(frac * info.ask_bound.kwh());
      if (info.ask_qty.positive()) {
        info.active_heads |= HeadMask{1} << ask_price;
        asks.push_back({static_cast<AgentId>(a), auction::Side::ask, config_.price_at(act.ask_price_idx),
                        info.ask_qty, ask_seq++});
        active_sellers.push_back(static_cast<AgentId>(a));
      }
    }
  }
  // prosumer bids, then (3) consumer bids at the retail tariff
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t a = 0; a < n; ++a) {
      const auto& h = config_.households[a];
      if (h.is_prosumer() != (pass == 0)) continue;
      auto& info = result.info[a];
      const Action& act = effective[a];
      Cents price = config_.consumer_bid_price();
      if (h.is_prosumer()) {
        price = config_.price_at(act.bid_price_idx);
      } else {
        info.bid_bound = Energy::floor_kwh(feasible_bid_max(state_.agents[a].load_forecast, 0.0, h.q_buy_max));
      }
      if (!info.bid_bound.positive()) continue;
      if (config_.learns(static_cast<AgentId>(a))) info.active_heads |= HeadMask{1} << bid_qty;
      const double frac = config_.quantity_menu[static_cast<std::size_t>(act.bid_qty_frac_idx)];
      info.bid_qty = Energy::floor_kwh(frac * info.bid_bound.kwh());
      if (!info.bid_qty.positive()) continue;
      if (h.is_prosumer()) info.active_heads |= HeadMask{1} << bid_price;
      bids.push_back({static_cast<AgentId>(a), auction::Side::bid, price, info.bid_qty, bid_seq++});
    }
  }

  // (4) clearing
  auto cleared = auction::clear(std::move(asks), std::move(bids));

  // (5) grid settlement of each agent's realized imbalance
  std::map<AgentId, Energy> positions;
  std::vector<auction::Order> residual_asks;
  std::vector<auction::Order> residual_bids;
  for (const auto& t : cleared.trades) {
    result.info[static_cast<std::size_t>(t.seller)].sold += t.quantity;
    result.info[static_cast<std::size_t>(t.buyer)].bought += t.quantity;
  }
  for (std::size_t a = 0; a < n; ++a) {
    const auto& h = config_.households[a];
    const auto& st = state_.agents[a];
    const auto& info = result.info[a];
    const Energy net = net_position(st.load, st.pv, info.q_dis, info.q_ch, h.has_storage);
    positions[static_cast<AgentId>(a)] = net;
    const Energy residual = net - info.bought + info.sold;
    if (residual.positive()) {
      residual_bids.push_back({static_cast<AgentId>(a), auction::Side::bid, config_.tariffs.retail, residual, 0});
    } else if (residual < Energy{}) {
      residual_asks.push_back({static_cast<AgentId>(a), auction::Side::ask, config_.tariffs.feed_in, -residual, 0});
    }
  }
  auto settlement =
      auction::settle_grid(residual_asks, residual_bids, config_.tariffs.retail, config_.tariffs.feed_in);
  result.ledger = auction::build_ledger(state_.slot, std::move(cleared.trades), std::move(settlement),
                                        config_.tariffs, config_.band, std::move(active_sellers),
                                        std::move(positions));
  result.ledger.names = names_;

  // (6) raw rewards
  auto& rw = result.rewards;
  rw.cash.assign(n, 0.0);
  rw.profit.assign(n, 0.0);
  rw.cost.assign(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    const double cash = result.ledger.cash_of(static_cast<AgentId>(a)).cents();
    rw.cash[a] = cash;
    if (config_.households[a].is_prosumer()) {
      rw.profit[a] = cash;
    } else {
      rw.cost[a] = -cash;
    }
  }

  // advance the clock
  for (std::size_t a = 0; a < n; ++a) state_.agents[a].soc = next_soc[a];
  ++state_.slot;
  if (!done()) {
    if (state_.hour() == 0) {
      const bool sunny = profiles::sample_weather(config_.p_sunny, state_.weather_rng);
      state_.weather = {sunny, profiles::intensity(sunny, config_.alpha)};
    }
    realize_slot();
  }
  result.done = done();
  return result;
}

}  // namespace fairmarket::env
