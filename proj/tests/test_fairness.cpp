#include "doctest.h"

#include <cstring>

#include "fairmarket/errors.hpp"
#include "fairmarket/fairness.hpp"
#include "fairmarket/log.hpp"
#include "stub_critic.hpp"

using namespace fairmarket;
using namespace fairmarket::fairness;
using auction::build_ledger;
using auction::GridSettlement;
using auction::Trade;

namespace {

Energy kwh(double x) { return Energy::from_kwh(x); }

auction::SlotLedger ledger_with(std::vector<Trade> trades, std::map<AgentId, Energy> imports = {},
                                std::vector<AgentId> sellers = {}) {
  GridSettlement s;
  s.imports = std::move(imports);
  return build_ledger(0, std::move(trades), s, {}, {}, std::move(sellers));
}

}  // namespace

TEST_CASE("ftg") {
  CHECK(ftg(ledger_with({{0, 9, 20, kwh(6)}})) == 1.0);
  CHECK(ftg(ledger_with({}, {{9, kwh(5)}})) == 0.0);
  CHECK(ftg(ledger_with({{0, 9, 20, kwh(3)}}, {{9, kwh(1)}})) == 0.75);
  CHECK(ftg(ledger_with({})) == 1.0);
}

TEST_CASE("fbs") {
  CHECK(fbs(ledger_with({{0, 9, 20, kwh(2)}, {1, 9, 20, kwh(2)}, {2, 9, 20, kwh(2)}}, {}, {0, 1, 2})) == 1.0);
  CHECK(fbs(ledger_with({{0, 9, 20, kwh(4)}}, {}, {0, 1})) == 0.5);
  CHECK(fbs(ledger_with({})) == 1.0);
  CHECK(fbs(ledger_with({{0, 9, 20, kwh(4)}}, {}, {0})) == 1.0);
  CHECK(fbs(ledger_with({}, {{9, kwh(1)}}, {0, 1})) == 1.0);
}

TEST_CASE("fpp") {
  CHECK(fpp(ledger_with({{0, 9, 15, kwh(1)}, {1, 9, 15, kwh(1)}, {2, 9, 15, kwh(1)}})) == 1.0);
  CHECK(fpp(ledger_with({{0, 9, 22, kwh(1)}})) == 1.0);
  CHECK(fpp(ledger_with({{0, 9, 10, kwh(1)}, {1, 9, 30, kwh(1)}})) == 0.0);
  // median 20, deviations (5, 0, 5) -> mean 10/3 over W = 10
  CHECK(fpp(ledger_with({{0, 9, 15, kwh(1)}, {1, 9, 20, kwh(1)}, {2, 9, 25, kwh(1)}})) ==
        doctest::Approx(1.0 - 1.0 / 3.0));
}

TEST_CASE("ramp") {
  const RampSchedule s{200, 3000};
  CHECK(ramp(100, s) == 0.0);
  CHECK(ramp(200, s) == 0.0);
  CHECK(ramp(1600, s) == 0.5);
  CHECK(ramp(3000, s) == 1.0);
  CHECK(ramp(9000, s) == 1.0);
  CHECK_THROWS_AS((RampSchedule{5, 5}.validate()), ConfigError);

  const auto cfg = ShapingConfig::with_default_schedules(10000);
  CHECK(cfg.grid.start == 200);
  CHECK(cfg.grid.full == 3000);
  CHECK(cfg.price.start == 200);
  CHECK(cfg.price.full == 3000);
  CHECK(cfg.peer.start == 3000);
  CHECK(cfg.peer.full == 8000);
}

TEST_CASE("shape") {
  ShapingConfig cfg;
  cfg.beta_grid = cfg.beta_price = cfg.beta_peer = 1.0;
  const FairnessScores scores{0.8, 1.0, 0.9};
  CHECK(shape(2.0, scores, {1, 1, 1}, cfg, kwh(1), kwh(2)) == doctest::Approx(4.2));
  const double pi = 1.2345678901;
  const double r = shape(pi, scores, {0, 0, 0}, cfg, kwh(1), kwh(2));
  CHECK(std::memcmp(&r, &pi, sizeof r) == 0);
  CHECK(shape(2.0, scores, {0, 0, 1}, cfg, {}, {}) == 2.0);
}

TEST_CASE("critic reply parsing") {
  const auto ok = parse_critic_reply(R"({"ftg":0.8,"fbs":0.9,"fpp":1.0})");
  REQUIRE(ok);
  CHECK(*ok == FairnessScores{0.8, 0.9, 1.0});
  const auto high = parse_critic_reply(R"({"ftg":1.7,"fbs":0.9,"fpp":1.0})");
  REQUIRE(high);
  CHECK(high->clamped().ftg == 1.0);
  CHECK_FALSE(parse_critic_reply("not json"));
  CHECK_FALSE(parse_critic_reply(R"({"ftg":0.8,"fbs":0.9})"));
  CHECK_FALSE(parse_critic_reply(R"({"ftg":"0.8","fbs":0.9,"fpp":1})"));
  CHECK_FALSE(parse_critic_reply("[0.8, 0.9, 1.0]"));
}

TEST_CASE("remote critic against a stub server") {
  log::set_mode(log::Mode::silent);
  const auto ledger = ledger_with({{0, 9, 10, kwh(3)}, {1, 9, 30, kwh(1)}}, {{9, kwh(1)}}, {0, 1});
  const auto local = deterministic_critic(ledger);

  SUBCASE("valid") {
    StubCritic stub(StubCritic::Mode::valid);
    RemoteCritic critic({stub.url(), std::chrono::milliseconds(1000), 0, "score: {{ledger}}"});
    CHECK(critic.score(ledger) == FairnessScores{0.8, 0.9, 1.0});
    CHECK(critic.fallbacks() == 0);
    const auto body = nlohmann::json::parse(stub.last_body());
    CHECK(body["peer_kwh"].get<double>() == doctest::Approx(4.0));
    CHECK(body["prompt"].get<std::string>().rfind("score: {", 0) == 0);
  }
  SUBCASE("out of range") {
    StubCritic stub(StubCritic::Mode::out_of_range);
    RemoteCritic critic({stub.url(), std::chrono::milliseconds(1000), 0, ""});
    CHECK(critic.score(ledger) == FairnessScores{1.0, 0.0, 0.5});
    CHECK(critic.clamped() == 1);
  }
  SUBCASE("malformed") {
    StubCritic stub(StubCritic::Mode::malformed);
    RemoteCritic critic({stub.url(), std::chrono::milliseconds(1000), 2, ""});
    CHECK(critic.score(ledger) == local);
    CHECK(critic.fallbacks() == 1);
    CHECK(stub.requests() == 3);
  }
  SUBCASE("timeout") {
    StubCritic stub(StubCritic::Mode::delayed);
    RemoteCritic critic({stub.url(), std::chrono::milliseconds(50), 0, ""});
    const auto t0 = std::chrono::steady_clock::now();
    CHECK(critic.score(ledger) == local);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(250));
    CHECK(critic.fallbacks() == 1);
  }
  SUBCASE("server error") {
    StubCritic stub(StubCritic::Mode::error_status);
    RemoteCritic critic({stub.url(), std::chrono::milliseconds(1000), 0, ""});
    CHECK(critic.score(ledger) == local);
  }
  SUBCASE("nobody listening") {
    RemoteCritic critic({"http://127.0.0.1:1/score", std::chrono::milliseconds(200), 0, ""});
    CHECK(critic.score(ledger) == local);
  }
  CHECK_THROWS_AS(RemoteCritic({"localhost", std::chrono::milliseconds(10), 0, ""}), ConfigError);
}
