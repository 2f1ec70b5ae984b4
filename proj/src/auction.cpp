#include "fairmarket/auction.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fairmarket/errors.hpp"

namespace fairmarket::auction {

ClearResult clear(std::vector<Order> asks, std::vector<Order> bids) {
  std::stable_sort(asks.begin(), asks.end(), [](const Order& a, const Order& b) {
    return a.price != b.price ? a.price < b.price : a.seq < b.seq;
  });
  std::stable_sort(bids.begin(), bids.end(), [](const Order& a, const Order& b) {
    return a.price != b.price ? a.price > b.price : a.seq < b.seq;
  });

  ClearResult result;
  for (auto& bid : bids) {
    for (auto& ask : asks) {
      if (!bid.quantity.positive()) break;
      if (ask.price > bid.price) break;
      if (!ask.quantity.positive() || ask.agent == bid.agent) continue;
      const Energy q = min(ask.quantity, bid.quantity);
      result.trades.push_back(Trade{ask.agent, bid.agent, ask.price, q});
      ask.quantity -= q;
      bid.quantity -= q;
    }
  }
  for (const auto& a : asks) {
    if (a.quantity.positive()) result.residual_asks.push_back(a);
  }
  for (const auto& b : bids) {
    if (b.quantity.positive()) result.residual_bids.push_back(b);
  }
  return result;
}

GridSettlement settle_grid(std::span<const Order> residual_asks, std::span<const Order> residual_bids,
                           Cents retail, Cents feed_in) {
  if (feed_in > retail) throw ConfigError("feed-in tariff exceeds retail tariff");
  GridSettlement s;
  for (const auto& b : residual_bids) {
    if (b.quantity.positive()) s.imports[b.agent] += b.quantity;
  }
  for (const auto& a : residual_asks) {
    if (a.quantity.positive()) s.exports[a.agent] += a.quantity;
  }
  return s;
}

namespace {

Energy lookup(const std::map<AgentId, Energy>& m, AgentId a) {
  const auto it = m.find(a);
  return it == m.end() ? Energy{} : it->second;
}

}  // namespace

Energy SlotLedger::peer_volume() const {
  Energy total;
  for (const auto& t : trades) total += t.quantity;
  return total;
}

Energy SlotLedger::total_import() const {
  Energy total;
  for (const auto& [_, q] : grid_import) total += q;
  return total;
}

Energy SlotLedger::total_export() const {
  Energy total;
  for (const auto& [_, q] : grid_export) total += q;
  return total;
}

Energy SlotLedger::sold_by(AgentId agent) const {
  Energy total;
  for (const auto& t : trades) {
    if (t.seller == agent) total += t.quantity;
  }
  return total;
}

Energy SlotLedger::bought_by(AgentId agent) const {
  Energy total;
  for (const auto& t : trades) {
    if (t.buyer == agent) total += t.quantity;
  }
  return total;
}

Energy SlotLedger::import_of(AgentId agent) const { return lookup(grid_import, agent); }
Energy SlotLedger::export_of(AgentId agent) const { return lookup(grid_export, agent); }

Money SlotLedger::cash_of(AgentId agent) const {
  Money cash;
  for (const auto& t : trades) {
    if (t.seller == agent) cash += value_of(t.quantity, t.price);
    if (t.buyer == agent) cash -= value_of(t.quantity, t.price);
  }
  cash -= value_of(import_of(agent), tariffs.retail);
  cash += value_of(export_of(agent), tariffs.feed_in);
  return cash;
}

Money SlotLedger::grid_revenue() const { return value_of(total_import(), tariffs.retail); }
Money SlotLedger::grid_cost() const { return value_of(total_export(), tariffs.feed_in); }

std::vector<AgentId> SlotLedger::agents() const {
  std::set<AgentId> ids;
  for (const auto& t : trades) {
    ids.insert(t.seller);
    ids.insert(t.buyer);
  }
  for (const auto& [a, _] : grid_import) ids.insert(a);
  for (const auto& [a, _] : grid_export) ids.insert(a);
  for (const auto& [a, _] : net_position) ids.insert(a);
  ids.insert(active_sellers.begin(), active_sellers.end());
  return {ids.begin(), ids.end()};
}

std::string SlotLedger::name_of(AgentId agent) const {
  if (names && agent >= 0 && static_cast<std::size_t>(agent) < names->size()) {
    return (*names)[static_cast<std::size_t>(agent)];
  }
  return std::to_string(agent);
}

SlotLedger build_ledger(int slot, std::vector<Trade> trades, GridSettlement settlement, Tariffs tariffs,
                        PriceBand band, std::vector<AgentId> active_sellers,
                        std::map<AgentId, Energy> net_position) {
  auto fail = [slot](const std::string& what) {
    throw InvariantError("ledger for slot " + std::to_string(slot) + ": " + what);
  };
  for (const auto& t : trades) {
    if (!t.quantity.positive()) fail("trade quantity must be > 0");
    if (t.seller == t.buyer) fail("self trade by agent " + std::to_string(t.seller));
    if (t.price < band.min || t.price > band.max) fail("trade price outside the band");
  }
  for (const auto* m : {&settlement.imports, &settlement.exports}) {
    for (const auto& [a, q] : *m) {
      if (q < Energy{}) fail("negative grid quantity for agent " + std::to_string(a));
    }
  }
  for (const auto& [a, q] : settlement.imports) {
    if (q.positive() && lookup(settlement.exports, a).positive()) {
      fail("agent " + std::to_string(a) + " both imports and exports");
    }
  }

  SlotLedger ledger;
  ledger.slot = slot;
  ledger.trades = std::move(trades);
  ledger.grid_import = std::move(settlement.imports);
  ledger.grid_export = std::move(settlement.exports);
  ledger.tariffs = tariffs;
  ledger.band = band;
  std::sort(active_sellers.begin(), active_sellers.end());
  active_sellers.erase(std::unique(active_sellers.begin(), active_sellers.end()), active_sellers.end());
  ledger.active_sellers = std::move(active_sellers);
  ledger.net_position = std::move(net_position);

  if (!ledger.net_position.empty()) {
    for (AgentId a : ledger.agents()) {
      const auto it = ledger.net_position.find(a);
      if (it == ledger.net_position.end()) fail("agent " + std::to_string(a) + " has no net position");
      const Energy settled =
          ledger.bought_by(a) + ledger.import_of(a) - ledger.sold_by(a) - ledger.export_of(a);
      if (settled != it->second) fail("energy imbalance for agent " + std::to_string(a));
    }
  }
  return ledger;
}

void write_ledger_csv_header(std::ostream& out) { out << "slot,seller,buyer,price_cents,quantity_kwh\n"; }

void write_ledger_csv_rows(std::ostream& out, const SlotLedger& ledger) {
  for (const auto& t : ledger.trades) {
    out << ledger.slot << ',' << ledger.name_of(t.seller) << ',' << ledger.name_of(t.buyer) << ','
        << t.price << ',' << format_kwh(t.quantity) << '\n';
  }
  for (const auto& [a, q] : ledger.grid_import) {
    if (q.positive()) {
      out << ledger.slot << ",GRID," << ledger.name_of(a) << ',' << ledger.tariffs.retail << ','
          << format_kwh(q) << '\n';
    }
  }
  for (const auto& [a, q] : ledger.grid_export) {
    if (q.positive()) {
      out << ledger.slot << ',' << ledger.name_of(a) << ",GRID," << ledger.tariffs.feed_in << ','
          << format_kwh(q) << '\n';
    }
  }
}

void write_ledger_csv(const std::filesystem::path& path, std::span<const SlotLedger> ledgers) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_ledger_csv_header(out);
  for (const auto& l : ledgers) write_ledger_csv_rows(out, l);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fairmarket::auction
