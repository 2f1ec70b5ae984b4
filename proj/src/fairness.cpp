#include "fairmarket/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fairmarket/errors.hpp"
#include "fairmarket/metrics.hpp"

namespace fairmarket::fairness {

namespace {

double clamp01(double v) {
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

FairnessScores FairnessScores::clamped() const { return {clamp01(ftg), clamp01(fbs), clamp01(fpp)}; }

double ftg(const auction::SlotLedger& ledger) {
  const auto peer = ledger.peer_volume().micro();
  const auto grid = ledger.total_import().micro();
  if (peer + grid == 0) return 1.0;
  return static_cast<double>(peer) / static_cast<double>(peer + grid);
}

double fbs(const auction::SlotLedger& ledger) {
  std::set<AgentId> sellers(ledger.active_sellers.begin(), ledger.active_sellers.end());
  for (const auto& t : ledger.trades) sellers.insert(t.seller);
  if (sellers.size() <= 1) return 1.0;
  std::vector<double> sold;
  for (AgentId s : sellers) sold.push_back(static_cast<double>(ledger.sold_by(s).micro()));
  return metrics::jfi(sold);
}

double fpp(const auction::SlotLedger& ledger) {
  if (ledger.trades.size() <= 1) return 1.0;
  std::vector<double> prices;
  for (const auto& t : ledger.trades) prices.push_back(t.price);
  std::sort(prices.begin(), prices.end());
  const std::size_t k = prices.size();
  const double median = k % 2 == 1 ? prices[k / 2] : 0.5 * (prices[k / 2 - 1] + prices[k / 2]);
  double dev = 0.0;
  for (double p : prices) dev += std::abs(p - median);
  dev /= static_cast<double>(k);
  const double half_width = 0.5 * static_cast<double>(ledger.band.max - ledger.band.min);
  return 1.0 - std::min(1.0, dev / half_width);
}

void RampSchedule::validate() const {
  if (!(start >= 0 && start < full)) throw ConfigError("ramp schedule needs 0 <= start < full");
}

double ramp(int episode, const RampSchedule& schedule) {
  if (episode < schedule.start) return 0.0;
  if (episode >= schedule.full) return 1.0;
  return static_cast<double>(episode - schedule.start) / static_cast<double>(schedule.full - schedule.start);
}

ShapingConfig ShapingConfig::with_default_schedules(int total_episodes) {
  auto at = [total_episodes](double frac) { return static_cast<int>(std::lround(frac * total_episodes)); };
  auto schedule = [&](double s, double f) {
    RampSchedule r{at(s), at(f)};
    r.full = std::max(r.full, r.start + 1);
    return r;
  };
  ShapingConfig c;
  c.total_episodes = total_episodes;
  c.grid = schedule(0.02, 0.30);
  c.price = schedule(0.02, 0.30);
  c.peer = schedule(0.30, 0.80);
  return c;
}

void ShapingConfig::validate() const {
  if (!(beta_grid >= 0.0 && beta_price >= 0.0 && beta_peer >= 0.0)) throw ConfigError("betas must be >= 0");
  grid.validate();
  price.validate();
  peer.validate();
}

Lambdas ShapingConfig::lambdas(int episode) const {
  return {ramp(episode, grid), ramp(episode, price), ramp(episode, peer)};
}

double shape(double profit, const FairnessScores& scores, const Lambdas& lambdas, const ShapingConfig& config,
             Energy sold, Energy sold_total) {
  const double share =
      sold_total.positive() ? static_cast<double>(sold.micro()) / static_cast<double>(sold_total.micro()) : 0.0;
  return profit + lambdas.grid * config.beta_grid * scores.ftg + lambdas.price * config.beta_price * scores.fpp +
         lambdas.peer * config.beta_peer * scores.fbs * share;
}

FairnessScores deterministic_critic(const auction::SlotLedger& ledger) {
  return FairnessScores{ftg(ledger), fbs(ledger), fpp(ledger)}.clamped();
}

}  // namespace fairmarket::fairness
