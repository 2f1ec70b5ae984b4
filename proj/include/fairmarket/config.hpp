#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "fairmarket/environment.hpp"
#include "fairmarket/fairness.hpp"
#include "fairmarket/learner.hpp"
#include "json.hpp"

namespace fairmarket::config {

struct CriticSettings {
  std::string backend = "deterministic";  // or "remote"
  fairness::RemoteCriticConfig remote;
};

/// Everything one run consumes. `market.templates` and `market.empirical` are
/// filled from the two CSV paths by `materialize`.
struct ScenarioConfig {
  std::uint64_t seed = 1;
  env::MarketConfig market;
  std::string templates_csv;
  std::string empirical_csv;
  fairness::ShapingConfig shaping;
  learner::TrainConfig train;
  CriticSettings critic;
  /// Evaluation stream seed; derived from `seed` when unset.
  std::optional<std::uint64_t> eval_seed;

  void validate() const;
  std::uint64_t evaluation_seed() const;
};

/// Three storage prosumers and two scripted consumers with the default tariffs.
ScenarioConfig defaults();

nlohmann::json to_json(const ScenarioConfig& config);

/// Strict parse: every key must be known and correctly typed; missing keys keep
/// their defaults. Ramp schedules not given explicitly follow total_episodes.
ScenarioConfig from_json(const nlohmann::json& j);

using EnvLookup = std::function<const char*(const char*)>;

/// Effective config with precedence `--set` > environment > file > default.
/// `sets` holds `dotted.key=value` strings; values parse as JSON, falling back
/// to a plain string. Throws ConfigError on unknown keys or bad values and
/// IoError when the file cannot be read.
ScenarioConfig load(const std::optional<std::filesystem::path>& file, std::span<const std::string> sets,
                    const EnvLookup& env = [](const char* name) { return static_cast<const char*>(std::getenv(name)); });

/// Loads the template and empirical CSVs named by the config into `market`.
void materialize(ScenarioConfig& config);

/// Builds the configured critic backend.
std::shared_ptr<fairness::CriticBackend> make_critic(const ScenarioConfig& config);

}  // namespace fairmarket::config
