#pragma once

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <string_view>

#include "fairmarket/auction.hpp"
#include "fairmarket/units.hpp"
#include "json.hpp"

namespace fairmarket::fairness {

struct FairnessScores {
  double ftg = 1.0;
  double fbs = 1.0;
  double fpp = 1.0;

  /// Each component clamped to [0, 1]; NaN maps to 0.
  FairnessScores clamped() const;
  friend bool operator==(const FairnessScores&, const FairnessScores&) = default;
};

/// Fraction of bought energy that came from peers; 1 when nothing was bought.
double ftg(const auction::SlotLedger& ledger);
/// Jain's index over per-seller peer sales of the slot's active sellers.
double fbs(const auction::SlotLedger& ledger);
/// 1 - min(1, mean |p - median| / half band width) over executed prices.
double fpp(const auction::SlotLedger& ledger);

struct RampSchedule {
  int start = 0;
  int full = 1;

  void validate() const;
};

/// Piecewise-linear coefficient: 0 before start, linear ramp, 1 from full on.
double ramp(int episode, const RampSchedule& schedule);

struct Lambdas {
  double grid = 0.0;
  double price = 0.0;
  double peer = 0.0;
};

struct ShapingConfig {
  double beta_grid = 10.0;
  double beta_price = 10.0;
  double beta_peer = 10.0;
  RampSchedule grid{200, 3000};
  RampSchedule price{200, 3000};
  RampSchedule peer{3000, 8000};
  int total_episodes = 10000;

  /// Breakpoints at fractions of E: grid and price (0.02E, 0.30E), peer (0.30E, 0.80E).
  static ShapingConfig with_default_schedules(int total_episodes);
  void validate() const;
  Lambdas lambdas(int episode) const;
};

/// Slot reward of one prosumer: raw profit plus ramped fairness bonuses, the
/// peer bonus weighted by the prosumer's share of the slot's peer sales.
double shape(double profit, const FairnessScores& scores, const Lambdas& lambdas, const ShapingConfig& config,
             Energy sold, Energy sold_total);

class CriticBackend {
 public:
  virtual ~CriticBackend() = default;
  /// Always returns scores within [0, 1]^3 and never blocks indefinitely.
  virtual FairnessScores score(const auction::SlotLedger& ledger) = 0;
};

FairnessScores deterministic_critic(const auction::SlotLedger& ledger);

class DeterministicCritic final : public CriticBackend {
 public:
  FairnessScores score(const auction::SlotLedger& ledger) override { return deterministic_critic(ledger); }
};

/// Aggregate-only ledger summary sent to remote critics.
nlohmann::json ledger_summary(const auction::SlotLedger& ledger);

/// Parses `{"ftg": x, "fbs": y, "fpp": z}`; nullopt for any other shape.
std::optional<FairnessScores> parse_critic_reply(std::string_view body);

struct RemoteCriticConfig {
  std::string url;  // e.g. http://127.0.0.1:8080/score
  std::chrono::milliseconds timeout{2000};
  int retries = 0;
  /// Optional template; `{{ledger}}` is replaced by the JSON summary and the
  /// result is sent as an extra "prompt" field.
  std::string prompt_template;
};

/// HTTP client for an external critic. Any transport error, timeout or
/// malformed reply falls back to the deterministic critic.
class RemoteCritic final : public CriticBackend {
 public:
  explicit RemoteCritic(RemoteCriticConfig config);

  FairnessScores score(const auction::SlotLedger& ledger) override;

  long calls() const { return calls_; }
  long fallbacks() const { return fallbacks_; }
  long clamped() const { return clamped_; }

 private:
  std::optional<std::string> post(const std::string& body) const;

  RemoteCriticConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::atomic<long> calls_{0};
  std::atomic<long> fallbacks_{0};
  std::atomic<long> clamped_{0};
};

}  // namespace fairmarket::fairness
