#include "fairmarket/sensitivity.hpp"

#include <exception>
#include <fstream>
#include <thread>

#include "fairmarket/errors.hpp"

namespace fairmarket::metrics {

std::vector<Counterfactual> default_counterfactuals() {
  return {{"pv_up20", 1.2, 1.0}, {"pv_down20", 0.8, 1.0}, {"load_up10", 1.0, 1.1}, {"load_down10", 1.0, 0.9}};
}

Evaluation evaluate_scaled(const env::MarketConfig& base, const learner::PolicySet& policies, std::uint64_t seed,
                           int days, double pv_scale, double load_scale) {
  auto config = base;
  config.pv_scale = base.pv_scale * pv_scale;
  config.load_scale = base.load_scale * load_scale;
  Evaluation ev;
  ev.rollout = learner::evaluate(config, policies, seed, days, /*deterministic=*/true);
  ev.report = build_report(ev.rollout.ledgers, config.households);
  return ev;
}

SensitivityReport sensitivity(const env::MarketConfig& base, const learner::PolicySet& policies, std::uint64_t seed,
                              int days, std::span<const Counterfactual> counterfactuals, int workers) {
  SensitivityReport out;
  out.baseline = evaluate_scaled(base, policies, seed, days, 1.0, 1.0);
  out.runs.resize(counterfactuals.size());
  std::vector<std::exception_ptr> errors(counterfactuals.size());
  auto run = [&](std::size_t i) {
    try {
      auto& r = out.runs[i];
      r.counterfactual = counterfactuals[i];
      r.evaluation = evaluate_scaled(base, policies, seed, days, r.counterfactual.pv_scale,
                                     r.counterfactual.load_scale);
      r.ratios = axis_ratios(radar_axes(out.baseline.report), radar_axes(r.evaluation.report));
      const double b = out.baseline.report.grid_import_kwh;
      const double c = r.evaluation.report.grid_import_kwh;
      if (b != 0.0) {
        r.grid_import_ratio = c / b;
      } else if (c == 0.0) {
        r.grid_import_ratio = 1.0;
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto threads = std::min<std::size_t>(counterfactuals.size(), static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < counterfactuals.size(); ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < counterfactuals.size(); i += threads) run(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

void write_delta_csv(const std::filesystem::path& path, const SensitivityReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(12);
  out << "axis";
  for (const auto& r : report.runs) out << ',' << r.counterfactual.name;
  out << '\n';
  for (std::size_t axis = 0; axis < 6; ++axis) {
    out << kRadarAxisNames[axis];
    for (const auto& r : report.runs) {
      out << ',';
      if (r.ratios[axis]) out << *r.ratios[axis];
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fairmarket::metrics
