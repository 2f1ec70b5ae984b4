#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairmarket/learner.hpp"
#include "fairmarket/metrics.hpp"

namespace fairmarket::metrics {

struct Counterfactual {
  std::string name;
  double pv_scale = 1.0;
  double load_scale = 1.0;
};

/// pv_up20, pv_down20, load_up10, load_down10.
std::vector<Counterfactual> default_counterfactuals();

struct Evaluation {
  learner::Rollout rollout;
  MarketReport report;
};

/// Deterministic frozen-policy run with the given scales applied to `base`.
Evaluation evaluate_scaled(const env::MarketConfig& base, const learner::PolicySet& policies, std::uint64_t seed,
                           int days, double pv_scale, double load_scale);

struct SensitivityRun {
  Counterfactual counterfactual;
  Evaluation evaluation;
  std::array<std::optional<double>, 6> ratios;
  std::optional<double> grid_import_ratio;
};

struct SensitivityReport {
  Evaluation baseline;
  std::vector<SensitivityRun> runs;
};

/// Baseline plus one run per counterfactual, all with the same seed; runs are
/// spread over `workers` threads.
SensitivityReport sensitivity(const env::MarketConfig& base, const learner::PolicySet& policies, std::uint64_t seed,
                              int days, std::span<const Counterfactual> counterfactuals, int workers = 1);

/// `axis,<counterfactual names...>`, one row per radar axis; empty cell when
/// the ratio is undefined.
void write_delta_csv(const std::filesystem::path& path, const SensitivityReport& report);

}  // namespace fairmarket::metrics
