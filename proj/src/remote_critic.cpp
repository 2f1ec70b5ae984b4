#include <set>

#include "fairmarket/errors.hpp"
#include "fairmarket/fairness.hpp"
#include "fairmarket/log.hpp"
#include "httplib.h"

namespace fairmarket::fairness {

nlohmann::json ledger_summary(const auction::SlotLedger& ledger) {
  nlohmann::json j;
  j["slot"] = ledger.slot;
  j["peer_kwh"] = ledger.peer_volume().kwh();
  j["grid_import_kwh"] = ledger.total_import().kwh();
  j["grid_export_kwh"] = ledger.total_export().kwh();
  std::set<AgentId> sellers(ledger.active_sellers.begin(), ledger.active_sellers.end());
  for (const auto& t : ledger.trades) sellers.insert(t.seller);
  nlohmann::json per_seller = nlohmann::json::object();
  for (AgentId s : sellers) per_seller[ledger.name_of(s)] = ledger.sold_by(s).kwh();
  j["seller_kwh"] = std::move(per_seller);
  nlohmann::json prices = nlohmann::json::array();
  for (const auto& t : ledger.trades) prices.push_back(static_cast<double>(t.price));
  j["trade_prices_cents"] = std::move(prices);
  return j;
}

std::optional<FairnessScores> parse_critic_reply(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return std::nullopt;
  FairnessScores s;
  for (auto [key, field] : {std::pair{"ftg", &s.ftg}, std::pair{"fbs", &s.fbs}, std::pair{"fpp", &s.fpp}}) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return std::nullopt;
    *field = it->get<double>();
  }
  return s;
}

RemoteCritic::RemoteCritic(RemoteCriticConfig config) : config_(std::move(config)) {
  const auto scheme = config_.url.find("://");
  if (config_.url.empty() || scheme == std::string::npos) {
    throw ConfigError("remote critic URL must look like http://host:port/path, got '" + config_.url + "'");
  }
  const auto slash = config_.url.find('/', scheme + 3);
  scheme_host_port_ = config_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.url.substr(slash);
  if (config_.timeout.count() <= 0) throw ConfigError("remote critic timeout must be > 0");
  if (config_.retries < 0) throw ConfigError("remote critic retries must be >= 0");
}

std::optional<std::string> RemoteCritic::post(const std::string& body) const {
  httplib::Client client(scheme_host_port_);
  const auto ms = config_.timeout.count();
  const auto sec = static_cast<time_t>(ms / 1000);
  const auto usec = static_cast<time_t>((ms % 1000) * 1000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  auto res = client.Post(path_, body, "application/json");
  if (!res) return std::nullopt;
  if (res->status != 200) return std::nullopt;
  return res->body;
}

FairnessScores RemoteCritic::score(const auction::SlotLedger& ledger) {
  ++calls_;
  auto request = ledger_summary(ledger);
  if (!config_.prompt_template.empty()) {
    std::string prompt = config_.prompt_template;
    const std::string marker = "{{ledger}}";
    const std::string summary = request.dump();
    for (auto pos = prompt.find(marker); pos != std::string::npos; pos = prompt.find(marker, pos + summary.size())) {
      prompt.replace(pos, marker.size(), summary);
    }
    request["prompt"] = std::move(prompt);
  }
  const std::string body = request.dump();

  std::string reason = "transport";
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    const auto reply = post(body);
    if (!reply) {
      reason = "transport";
      continue;
    }
    const auto parsed = parse_critic_reply(*reply);
    if (!parsed) {
      reason = "malformed";
      continue;
    }
    const auto scores = parsed->clamped();
    if (!(scores == *parsed)) {
      ++clamped_;
      log::event("critic_clamped", {{"slot", ledger.slot}});
    }
    return scores;
  }
  ++fallbacks_;
  log::warn("critic_fallback", {{"slot", ledger.slot}, {"reason", reason}});
  return deterministic_critic(ledger);
}

}  // namespace fairmarket::fairness
