#include "fairmarket/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "fairmarket/errors.hpp"
#include "fairmarket/fairness.hpp"

namespace fairmarket::metrics {

double jfi(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("jfi of an empty vector");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double v : x) {
    if (v < 0.0) throw std::invalid_argument("jfi needs non-negative values");
    sum += v;
    sum_sq += v * v;
  }
  if (sum == 0.0) return 1.0;
  return std::min(1.0, (sum * sum) / (static_cast<double>(x.size()) * sum_sq));
}

double seller_entropy(std::span<const double> shares) {
  double total = 0.0;
  int k = 0;
  for (double s : shares) {
    if (s < 0.0) throw std::invalid_argument("seller_entropy needs non-negative shares");
    if (s > 0.0) {
      total += s;
      ++k;
    }
  }
  if (k <= 1) return 0.0;
  double h = 0.0;
  for (double s : shares) {
    if (s > 0.0) {
      const double p = s / total;
      h -= p * std::log(p);
    }
  }
  return std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
}

double price_spread(const auction::SlotLedger& ledger) {
  if (ledger.trades.size() < 2) return 0.0;
  const auto [lo, hi] = std::minmax_element(ledger.trades.begin(), ledger.trades.end(),
                                            [](const auto& a, const auto& b) { return a.price < b.price; });
  return static_cast<double>(hi->price - lo->price);
}

EnergySplit energy_split(std::span<const auction::SlotLedger> ledgers) {
  EnergySplit s;
  for (const auto& l : ledgers) {
    s.peer += l.peer_volume();
    s.grid += l.total_import() + l.total_export();
  }
  const auto denom = s.peer + s.grid;
  if (denom.positive()) s.peer_share = static_cast<double>(s.peer.micro()) / static_cast<double>(denom.micro());
  return s;
}

std::optional<double> AgentEconomics::avg_cost_per_kwh() const {
  const double acquired = peer_bought_kwh + grid_import_kwh;
  if (!(acquired > 0.0)) return std::nullopt;
  return total_cost_cents() / acquired;
}

Economics economics(std::span<const auction::SlotLedger> ledgers, std::span<const profiles::HouseholdSpec> households) {
  Economics e;
  const auto n = households.size();
  std::vector<Money> cash(n);
  std::vector<Money> peer_spend(n), peer_rev(n), grid_spend(n), grid_rev(n);
  std::vector<Energy> bought(n), sold(n), imported(n), exported(n);
  Money grid_revenue;
  Money grid_cost;
  auto idx = [n](AgentId a) {
    if (a < 0 || static_cast<std::size_t>(a) >= n) throw InvariantError("ledger references unknown agent");
    return static_cast<std::size_t>(a);
  };
  for (const auto& l : ledgers) {
    for (const auto& t : l.trades) {
      const Money v = value_of(t.quantity, t.price);
      peer_rev[idx(t.seller)] += v;
      peer_spend[idx(t.buyer)] += v;
      sold[idx(t.seller)] += t.quantity;
      bought[idx(t.buyer)] += t.quantity;
    }
    for (const auto& [a, q] : l.grid_import) {
      grid_spend[idx(a)] += value_of(q, l.tariffs.retail);
      imported[idx(a)] += q;
    }
    for (const auto& [a, q] : l.grid_export) {
      grid_rev[idx(a)] += value_of(q, l.tariffs.feed_in);
      exported[idx(a)] += q;
    }
    grid_revenue += l.grid_revenue();
    grid_cost += l.grid_cost();
  }
  Money total;
  for (std::size_t a = 0; a < n; ++a) {
    cash[a] = peer_rev[a] + grid_rev[a] - peer_spend[a] - grid_spend[a];
    total += cash[a];
    AgentEconomics ae;
    ae.id = households[a].id;
    ae.prosumer = households[a].is_prosumer();
    ae.net_cash_cents = cash[a].cents();
    ae.peer_spend_cents = peer_spend[a].cents();
    ae.peer_revenue_cents = peer_rev[a].cents();
    ae.grid_spend_cents = grid_spend[a].cents();
    ae.grid_revenue_cents = grid_rev[a].cents();
    ae.peer_bought_kwh = bought[a].kwh();
    ae.grid_import_kwh = imported[a].kwh();
    ae.peer_sold_kwh = sold[a].kwh();
    ae.grid_export_kwh = exported[a].kwh();
    if (ae.prosumer) {
      e.prosumer_profit_cents += ae.net_cash_cents;
    } else {
      e.consumer_cost_cents += ae.total_cost_cents();
    }
    e.agents.push_back(std::move(ae));
  }
  e.grid.revenue_cents = grid_revenue.cents();
  e.grid.cost_cents = grid_cost.cents();
  e.grid.net_cents = (grid_revenue - grid_cost).cents();
  e.imbalance_micro_cents = (total + grid_revenue - grid_cost).micro();
  return e;
}

namespace {

double hour_jfi(const auction::SlotLedger& l) {
  std::set<AgentId> sellers(l.active_sellers.begin(), l.active_sellers.end());
  for (const auto& t : l.trades) sellers.insert(t.seller);
  if (sellers.empty()) return 1.0;
  std::vector<double> sold;
  for (AgentId s : sellers) sold.push_back(l.sold_by(s).kwh());
  return jfi(sold);
}

double hour_entropy(const auction::SlotLedger& l) {
  std::set<AgentId> sellers;
  for (const auto& t : l.trades) sellers.insert(t.seller);
  std::vector<double> shares;
  for (AgentId s : sellers) shares.push_back(l.sold_by(s).kwh());
  return seller_entropy(shares);
}

}  // namespace

MarketReport build_report(std::span<const auction::SlotLedger> ledgers,
                          std::span<const profiles::HouseholdSpec> households) {
  MarketReport r;
  r.split = energy_split(ledgers);
  r.economics = economics(ledgers, households);
  double entropy_sum = 0.0;
  int entropy_hours = 0;
  int above = 0;
  double ftg_sum = 0.0, fbs_sum = 0.0, fpp_sum = 0.0;
  for (const auto& l : ledgers) {
    HourRow row;
    row.hour = l.slot;
    row.spread_cents = price_spread(l);
    row.entropy = hour_entropy(l);
    row.jfi = hour_jfi(l);
    row.peer_kwh = l.peer_volume().kwh();
    row.grid_kwh = (l.total_import() + l.total_export()).kwh();
    r.grid_import_kwh += l.total_import().kwh();
    r.grid_export_kwh += l.total_export().kwh();
    if (!l.trades.empty()) {
      entropy_sum += row.entropy;
      ++entropy_hours;
    }
    r.min_jfi = std::min(r.min_jfi, row.jfi);
    if (row.jfi >= 0.90) ++above;
    const auto s = fairness::deterministic_critic(l);
    ftg_sum += s.ftg;
    fbs_sum += s.fbs;
    fpp_sum += s.fpp;
    r.hours.push_back(row);
  }
  if (entropy_hours > 0) r.mean_entropy = entropy_sum / entropy_hours;
  if (!ledgers.empty()) {
    const auto n = static_cast<double>(ledgers.size());
    r.share_jfi_above_090 = above / n;
    r.mean_ftg = ftg_sum / n;
    r.mean_fbs = fbs_sum / n;
    r.mean_fpp = fpp_sum / n;
  }
  return r;
}

nlohmann::json to_json(const MarketReport& r) {
  using nlohmann::json;
  json j;
  j["peer_kwh"] = r.split.peer.kwh();
  j["grid_kwh"] = r.split.grid.kwh();
  j["peer_share"] = r.split.peer_share ? json(*r.split.peer_share) : json(nullptr);
  j["grid_import_kwh"] = r.grid_import_kwh;
  j["grid_export_kwh"] = r.grid_export_kwh;
  j["mean_entropy"] = r.mean_entropy;
  j["min_jfi"] = r.min_jfi;
  j["share_hours_jfi_above_0_90"] = r.share_jfi_above_090;
  j["mean_ftg"] = r.mean_ftg;
  j["mean_fbs"] = r.mean_fbs;
  j["mean_fpp"] = r.mean_fpp;
  j["slots"] = r.hours.size();
  json agents = json::array();
  for (const auto& a : r.economics.agents) {
    json ja{{"id", a.id},
            {"role", a.prosumer ? "prosumer" : "consumer"},
            {"net_cash_cents", a.net_cash_cents},
            {"peer_revenue_cents", a.peer_revenue_cents},
            {"peer_spend_cents", a.peer_spend_cents},
            {"grid_revenue_cents", a.grid_revenue_cents},
            {"grid_spend_cents", a.grid_spend_cents},
            {"peer_bought_kwh", a.peer_bought_kwh},
            {"peer_sold_kwh", a.peer_sold_kwh},
            {"grid_import_kwh", a.grid_import_kwh},
            {"grid_export_kwh", a.grid_export_kwh}};
    if (!a.prosumer) {
      ja["total_cost_cents"] = a.total_cost_cents();
      const auto avg = a.avg_cost_per_kwh();
      ja["avg_cost_cents_per_kwh"] = avg ? json(*avg) : json(nullptr);
    }
    agents.push_back(std::move(ja));
  }
  j["economics"] = {{"agents", agents},
                    {"prosumer_profit_cents", r.economics.prosumer_profit_cents},
                    {"consumer_cost_cents", r.economics.consumer_cost_cents},
                    {"grid",
                     {{"revenue_cents", r.economics.grid.revenue_cents},
                      {"cost_cents", r.economics.grid.cost_cents},
                      {"net_cents", r.economics.grid.net_cents}}}};
  j["conventions"] = {{"entropy", "natural log, normalized by ln(active sellers); mean over hours with peer trades"},
                      {"jfi", "over sellers that submitted an ask; 1 when no energy sold"},
                      {"grid_kwh", "grid imports + grid exports"}};
  return j;
}

void write_hourly_csv(const std::filesystem::path& path, const MarketReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "hour,spread_cents,entropy,jfi,peer_kwh,grid_kwh\n";
  out.precision(10);
  for (const auto& h : report.hours) {
    out << h.hour << ',' << h.spread_cents << ',' << h.entropy << ',' << h.jfi << ',' << h.peer_kwh << ','
        << h.grid_kwh << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

RadarAxes radar_axes(const MarketReport& r) {
  return {r.split.peer.kwh(),
          r.split.grid.kwh(),
          r.economics.consumer_cost_cents,
          r.economics.prosumer_profit_cents,
          r.mean_entropy,
          r.economics.grid.net_cents};
}

std::array<double, 6> axis_values(const RadarAxes& a) {
  return {a.peer_trades_kwh, a.grid_trades_kwh,  a.consumer_cost_cents,
          a.prosumer_profit_cents, a.mean_entropy, a.grid_net_profit_cents};
}

std::array<std::optional<double>, 6> axis_ratios(const RadarAxes& baseline, const RadarAxes& counterfactual) {
  const auto b = axis_values(baseline);
  const auto c = axis_values(counterfactual);
  std::array<std::optional<double>, 6> out;
  for (std::size_t i = 0; i < 6; ++i) {
    if (b[i] == 0.0) {
      if (c[i] == 0.0) out[i] = 1.0;
    } else {
      out[i] = c[i] / b[i];
    }
  }
  return out;
}

}  // namespace fairmarket::metrics
