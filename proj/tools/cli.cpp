#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "fairmarket/config.hpp"
#include "fairmarket/errors.hpp"
#include "fairmarket/ingest.hpp"
#include "fairmarket/learner.hpp"
#include "fairmarket/log.hpp"
#include "fairmarket/metrics.hpp"
#include "fairmarket/sensitivity.hpp"

namespace fairmarket::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool quiet = false;
  bool print_config = false;
};

config::ScenarioConfig load_scenario(const Common& c) {
  std::optional<fs::path> file;
  if (!c.config.empty()) file = c.config;
  auto cfg = config::load(file, c.sets);
  if (c.workers < 1) throw ConfigError("--workers must be >= 1");
  cfg.train.workers = c.workers;
  return cfg;
}

bool non_empty_dir(const fs::path& p) {
  return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p));
}

void prepare_out_dir(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out)) throw IoError(out.string() + " exists and is not a directory");
  if (non_empty_dir(out)) {
    if (!force) throw IoError("output directory " + out.string() + " is not empty (pass --force to overwrite)");
    for (const auto& entry : fs::directory_iterator(out)) fs::remove_all(entry.path());
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::exists(p / "checkpoint.json")) return p;
  if (fs::exists(p / "checkpoints" / "final" / "checkpoint.json")) return p / "checkpoints" / "final";
  throw IoError("missing checkpoint: no checkpoint.json under " + p.string());
}

std::string episode_dir_name(int episode) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%06d", episode);
  return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  std::optional<fs::path> best;
  int best_ep = -1;
  if (!fs::is_directory(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("episode_", 0) != 0 || !fs::exists(entry.path() / "checkpoint.json")) continue;
    int ep = 0;
    const auto digits = std::string_view(name).substr(8);
    const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), ep);
    if (ec != std::errc() || p != digits.data() + digits.size()) continue;
    if (ep > best_ep) {
      best_ep = ep;
      best = entry.path();
    }
  }
  return best;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string out;
  bool force = false;
  bool resume = false;
};

int cmd_train(const Common& common, const TrainArgs& args) {
  auto cfg = load_scenario(common);
  config::materialize(cfg);
  const json cfg_json = config::to_json(cfg);
  const fs::path out = args.out;
  const fs::path ckdir = out / "checkpoints";

  std::optional<learner::Checkpoint> resume_from;
  if (args.resume) {
    std::ifstream in(out / "config.json");
    if (!in) throw IoError("cannot resume: " + (out / "config.json").string() + " not found");
    json saved;
    try {
      saved = json::parse(in);
    } catch (const json::parse_error& e) {
      throw IoError("cannot resume: corrupt config.json: " + std::string(e.what()));
    }
    if (saved != cfg_json) throw ConfigError("cannot resume: effective config differs from " + (out / "config.json").string());
    const auto latest = latest_checkpoint(ckdir);
    if (!latest) throw IoError("cannot resume: no checkpoint under " + ckdir.string());
    resume_from = learner::load_checkpoint(*latest);
  }

  learner::Trainer trainer(cfg.market, cfg.shaping, cfg.train, config::make_critic(cfg));
  if (resume_from) {
    trainer.restore(resume_from->episode, std::move(resume_from->learners));
  } else {
    prepare_out_dir(out, args.force);
    write_json(out / "config.json", cfg_json);
  }

  const fs::path curves_path = out / "curves.jsonl";
  if (resume_from) {
    // Drop records past the checkpoint so the replayed episodes are not duplicated.
    std::vector<std::string> keep;
    std::ifstream in(curves_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto rec = json::parse(line, nullptr, false);
      if (!rec.is_discarded() && rec.value("episode", 0) < trainer.episode()) keep.push_back(line);
    }
    std::ofstream rewrite(curves_path, std::ios::trunc);
    for (const auto& l : keep) rewrite << l << '\n';
    if (!rewrite) throw IoError("cannot rewrite " + curves_path.string());
  }
  std::ofstream curves(curves_path, std::ios::app);
  if (!curves) throw IoError("cannot write " + curves_path.string());

  log::event("train_start", {{"episodes", cfg.train.total_episodes},
                             {"from_episode", trainer.episode()},
                             {"learners", trainer.learners().size()},
                             {"workers", cfg.train.workers}});
  trainer.train(
      [&](const std::vector<learner::CurveRecord>& records) {
        for (const auto& r : records) curves << learner::to_json(r).dump() << '\n';
        if (!curves) throw IoError("write failed for " + curves_path.string());
      },
      [&](int episode) {
        learner::save_checkpoint(ckdir / episode_dir_name(episode), episode, trainer.learners(), cfg_json);
        log::event("checkpoint", {{"episode", episode}});
      });
  curves.flush();
  learner::save_checkpoint(ckdir / "final", trainer.episode(), trainer.learners(), cfg_json);
  log::event("train_done", {{"episodes", trainer.episode()}, {"out", out.string()}});
  log::summary("trained " + std::to_string(trainer.episode()) + " episodes; checkpoints in " + ckdir.string());
  return kOk;
}

// ---------------------------------------------------------------- simulate / sensitivity

struct EvalArgs {
  std::string checkpoints;
  std::optional<int> days;
  std::string out;
  bool force = false;
  bool identity_only = false;
};

struct Frozen {
  config::ScenarioConfig cfg;
  learner::PolicySet policies;
  int episode = 0;
  fs::path checkpoint;
  int days = 0;
};

Frozen load_frozen(const Common& common, const EvalArgs& args) {
  Frozen f;
  f.cfg = load_scenario(common);
  config::materialize(f.cfg);
  f.days = args.days.value_or(f.cfg.market.horizon_days);
  if (f.days < 1) throw ConfigError("--days must be >= 1");
  f.checkpoint = resolve_checkpoint(args.checkpoints);
  const auto ck = learner::load_checkpoint(f.checkpoint);
  f.policies = learner::policies_for(f.cfg.market, ck);
  f.episode = ck.episode;
  return f;
}

void check_balance(const metrics::MarketReport& report) {
  if (report.economics.imbalance_micro_cents != 0) {
    throw InvariantError("money imbalance of " + std::to_string(report.economics.imbalance_micro_cents) +
                         " micro-cents in evaluation ledgers");
  }
}

void write_evaluation(const fs::path& dir, const metrics::Evaluation& ev, const Frozen& f, double pv_scale,
                      double load_scale) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  check_balance(ev.report);
  auction::write_ledger_csv(dir / "ledger.csv", ev.rollout.ledgers);
  metrics::write_hourly_csv(dir / "hourly.csv", ev.report);
  json j = metrics::to_json(ev.report);
  j["run"] = {{"seed", f.cfg.evaluation_seed()},
              {"days", f.days},
              {"checkpoint", f.checkpoint.string()},
              {"checkpoint_episode", f.episode},
              {"pv_scale", pv_scale},
              {"load_scale", load_scale}};
  write_json(dir / "report.json", j);
}

int cmd_simulate(const Common& common, const EvalArgs& args) {
  const auto f = load_frozen(common, args);
  prepare_out_dir(args.out, args.force);
  const auto ev = metrics::evaluate_scaled(f.cfg.market, f.policies, f.cfg.evaluation_seed(), f.days,
                                           f.cfg.market.pv_scale, f.cfg.market.load_scale);
  write_evaluation(args.out, ev, f, f.cfg.market.pv_scale, f.cfg.market.load_scale);
  const auto share = ev.report.split.peer_share;
  log::event("simulate_done", {{"slots", ev.rollout.ledgers.size()},
                               {"peer_share", share ? json(*share) : json(nullptr)},
                               {"out", args.out}});
  log::summary("simulated " + std::to_string(ev.rollout.ledgers.size()) + " slots; peer share " +
               (share ? std::to_string(*share) : std::string("n/a")));
  return kOk;
}

int cmd_sensitivity(const Common& common, const EvalArgs& args) {
  const auto f = load_frozen(common, args);
  prepare_out_dir(args.out, args.force);
  std::vector<metrics::Counterfactual> cfs = args.identity_only
                                                 ? std::vector<metrics::Counterfactual>{{"identity", 1.0, 1.0}}
                                                 : metrics::default_counterfactuals();
  auto base = f.cfg.market;
  base.pv_scale = 1.0;
  base.load_scale = 1.0;
  const fs::path out = args.out;
  const auto rep = metrics::sensitivity(base, f.policies, f.cfg.evaluation_seed(), f.days, cfs, f.cfg.train.workers);
  write_evaluation(out / "baseline", rep.baseline, f, 1.0, 1.0);
  json summary = json::array();
  for (const auto& run : rep.runs) {
    if (!args.identity_only) {
      write_evaluation(out / run.counterfactual.name, run.evaluation, f, run.counterfactual.pv_scale,
                       run.counterfactual.load_scale);
    }
    json ratios;
    for (std::size_t i = 0; i < 6; ++i) {
      ratios[metrics::kRadarAxisNames[i]] = run.ratios[i] ? json(*run.ratios[i]) : json(nullptr);
    }
    summary.push_back({{"name", run.counterfactual.name},
                       {"pv_scale", run.counterfactual.pv_scale},
                       {"load_scale", run.counterfactual.load_scale},
                       {"ratios", ratios},
                       {"grid_import_ratio", run.grid_import_ratio ? json(*run.grid_import_ratio) : json(nullptr)}});
  }
  metrics::write_delta_csv(out / "deltas.csv", rep);
  write_json(out / "summary.json", {{"convention", "counterfactual / baseline"}, {"runs", summary}});
  log::event("sensitivity_done", {{"runs", rep.runs.size()}, {"out", args.out}});
  log::summary("wrote " + std::to_string(args.identity_only ? 1 : rep.runs.size() + 1) + " reports and deltas.csv to " +
               args.out);
  return kOk;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string input;
  std::string out;
  bool force = false;
  ingest::Columns columns;
};

int cmd_ingest(const IngestArgs& args) {
  const fs::path out = args.out;
  if (fs::exists(out) && !args.force) throw IoError(out.string() + " exists (pass --force to overwrite)");
  const auto hourly = ingest::aggregate_file(args.input, args.columns);
  Energy load, pv;
  std::size_t hours = 0;
  for (const auto& [id, s] : hourly.series) {
    for (const auto& e : s.load) load += e;
    for (const auto& e : s.pv) pv += e;
    hours = s.load.size();
  }
  if (load != hourly.raw_load || pv != hourly.raw_pv) throw InvariantError("hourly totals differ from raw totals");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ingest::write_hourly_csv(out, hourly);
  log::event("ingest_done", {{"households", hourly.households.size()},
                             {"hours", hours},
                             {"load_kwh", format_kwh(load)},
                             {"pv_kwh", format_kwh(pv)}});
  log::summary("ingested " + std::to_string(hourly.households.size()) + " households x " + std::to_string(hours) +
               " hours into " + out.string());
  return kOk;
}

int print_config(const Common& common) {
  const auto cfg = load_scenario(common);
  std::cout << config::to_json(cfg).dump(2) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Peer-to-peer electricity market with fairness-shaped multi-agent PPO", "fairmarket"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  Common common;
  app.add_option("--config", common.config, "Scenario config (JSON)");
  app.add_option("--set", common.sets, "Override one key, e.g. --set train.total_episodes=2000")->take_all()
      ->allow_extra_args(false);
  app.add_option("--workers", common.workers, "Worker threads")->capture_default_str();
  app.add_flag("--quiet", common.quiet, "Human summaries instead of JSON log lines");
  app.add_flag("--print-config", common.print_config, "Print the effective config and exit");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train prosumer policies");
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_flag("--force", train_args.force, "Overwrite a non-empty output directory");
  train->add_flag("--resume", train_args.resume, "Continue from the latest checkpoint in --out");

  EvalArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "Evaluate frozen policies");
  simulate->add_option("--checkpoints", sim_args.checkpoints, "Checkpoint directory or training output")->required();
  simulate->add_option("--days", sim_args.days, "Evaluation horizon in days (default market.horizon_days)");
  simulate->add_option("--out", sim_args.out, "Output directory")->required();
  simulate->add_flag("--force", sim_args.force, "Overwrite a non-empty output directory");

  EvalArgs sens_args;
  auto* sens = app.add_subcommand("sensitivity", "PV and load counterfactuals with frozen policies");
  sens->add_option("--checkpoints", sens_args.checkpoints, "Checkpoint directory or training output")->required();
  sens->add_option("--days", sens_args.days, "Evaluation horizon in days (default market.horizon_days)");
  sens->add_option("--out", sens_args.out, "Output directory")->required();
  sens->add_flag("--force", sens_args.force, "Overwrite a non-empty output directory");
  sens->add_flag("--identity-only", sens_args.identity_only, "Only the identity scales (baseline check)");

  IngestArgs ing_args;
  auto* ing = app.add_subcommand("ingest", "Aggregate 15-minute readings to hourly profiles");
  ing->add_option("input", ing_args.input, "Raw CSV")->required();
  ing->add_option("--out", ing_args.out, "Hourly CSV to write")->required();
  ing->add_flag("--force", ing_args.force, "Overwrite an existing output file");
  ing->add_option("--timestamp-col", ing_args.columns.timestamp, "Timestamp column")->capture_default_str();
  ing->add_option("--household-col", ing_args.columns.household, "Household column")->capture_default_str();
  ing->add_option("--load-col", ing_args.columns.load, "Load column (kWh)")->capture_default_str();
  ing->add_option("--pv-col", ing_args.columns.pv, "PV column (kWh)")->capture_default_str();

  auto* print = app.add_subcommand("print-config", "Print the effective config with every default");

  std::vector<std::string> owned = args;
  owned.insert(owned.begin(), "fairmarket");
  std::vector<char*> argv;
  for (auto& s : owned) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  log::set_mode(common.quiet ? log::Mode::quiet : log::Mode::json);

  try {
    if (common.print_config || print->parsed()) return print_config(common);
    if (train->parsed()) return cmd_train(common, train_args);
    if (simulate->parsed()) return cmd_simulate(common, sim_args);
    if (sens->parsed()) return cmd_sensitivity(common, sens_args);
    if (ing->parsed()) return cmd_ingest(ing_args);
    std::cerr << app.help();
    return kConfigError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIoError;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << '\n';
    return kInvariantError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvariantError;
  }
}

}  // namespace fairmarket::cli
