#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fairmarket/units.hpp"

namespace fairmarket::auction {

enum class Side { ask, bid };

struct PriceBand {
  Cents min = 10;
  Cents max = 30;
};

struct Tariffs {
  Cents retail = 30;
  Cents feed_in = 10;
};

struct Order {
  AgentId agent = 0;
  Side side = Side::ask;
  Cents price = 0;
  Energy quantity;
  int seq = 0;
};

struct Trade {
  AgentId seller = 0;
  AgentId buyer = 0;
  Cents price = 0;
  Energy quantity;

  friend bool operator==(const Trade&, const Trade&) = default;
};

struct ClearResult {
  std::vector<Trade> trades;
  std::vector<Order> residual_asks;
  std::vector<Order> residual_bids;
};

/// Greedy continuous double auction for one slot.
///
/// The best bid (highest price, then lowest seq) is matched against the best
/// ask (lowest price, then lowest seq) from a different agent while the bid
/// price is at least the ask price. Each match executes min(remaining) at the
/// ask's price; exhausted orders leave the book. Orders never match against
/// another order of the same agent.
ClearResult clear(std::vector<Order> asks, std::vector<Order> bids);

struct GridSettlement {
  std::map<AgentId, Energy> imports;  // bought from the grid at retail
  std::map<AgentId, Energy> exports;  // sold to the grid at feed-in
};

/// Residual bids become grid imports, residual asks become grid exports.
/// Throws ConfigError when feed_in > retail.
GridSettlement settle_grid(std::span<const Order> residual_asks, std::span<const Order> residual_bids,
                           Cents retail, Cents feed_in);

/// Complete settlement record for one slot.
struct SlotLedger {
  int slot = 0;
  std::vector<Trade> trades;
  std::map<AgentId, Energy> grid_import;
  std::map<AgentId, Energy> grid_export;
  Tariffs tariffs;
  PriceBand band;
  /// Agents that submitted a non-zero ask this slot.
  std::vector<AgentId> active_sellers;
  /// Realized storage-adjusted net demand per agent (may be negative). When
  /// present, every agent's peer buys + imports - peer sells - exports equals it.
  std::map<AgentId, Energy> net_position;
  /// Optional display names indexed by AgentId.
  std::shared_ptr<const std::vector<std::string>> names;

  Energy peer_volume() const;
  Energy total_import() const;
  Energy total_export() const;
  Energy sold_by(AgentId agent) const;
  Energy bought_by(AgentId agent) const;
  Energy import_of(AgentId agent) const;
  Energy export_of(AgentId agent) const;
  /// Net cash of an agent this slot: peer revenue + feed-in revenue - peer
  /// expenditure - retail expenditure.
  Money cash_of(AgentId agent) const;
  Money grid_revenue() const;
  Money grid_cost() const;
  /// Every agent that appears anywhere in the ledger.
  std::vector<AgentId> agents() const;
  std::string name_of(AgentId agent) const;
};

/// Assembles a ledger and checks its invariants; throws InvariantError on
/// any violation (negative or zero-sized trades, self trades, out-of-band
/// prices, simultaneous import and export, energy imbalance).
SlotLedger build_ledger(int slot, std::vector<Trade> trades, GridSettlement settlement, Tariffs tariffs,
                        PriceBand band, std::vector<AgentId> active_sellers = {},
                        std::map<AgentId, Energy> net_position = {});

/// `slot,seller,buyer,price_cents,quantity_kwh`; grid rows use GRID as the counterparty.
void write_ledger_csv_header(std::ostream& out);
void write_ledger_csv_rows(std::ostream& out, const SlotLedger& ledger);
void write_ledger_csv(const std::filesystem::path& path, std::span<const SlotLedger> ledgers);

}  // namespace fairmarket::auction
