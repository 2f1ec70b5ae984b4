#include <cstring>
#include <exception>
#include <fstream>
#include <thread>

#include "fairmarket/errors.hpp"
#include "fairmarket/learner.hpp"

namespace fairmarket::learner {

nlohmann::json to_json(const CurveRecord& r) {
  return {{"episode", r.episode},
          {"agent", r.agent},
          {"total_reward", r.total_reward},
          {"raw_return", r.raw_return},
          {"ftg", r.ftg},
          {"fbs", r.fbs},
          {"fpp", r.fpp},
          {"lambda_grid", r.lambdas.grid},
          {"lambda_price", r.lambdas.price},
          {"lambda_peer", r.lambdas.peer}};
}

namespace {

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += threads) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

env::Action action_for(const env::MarketConfig& config, AgentId a, const std::array<int, kNumHeads>& idx) {
  if (!config.learns(a)) return env::scripted_consumer_action(config);
  return env::Action::from_indices(idx);
}

}  // namespace

Trainer::Trainer(env::MarketConfig market, fairness::ShapingConfig shaping, TrainConfig train,
                 std::shared_ptr<fairness::CriticBackend> critic)
    : market_(std::move(market)), shaping_(shaping), train_(train), critic_(std::move(critic)) {
  shaping_.validate();
  train_.validate();
  if (train_.episode_days > market_.config().horizon_days) {
    throw ConfigError("episode_days must not exceed horizon_days");
  }
  if (!critic_) critic_ = std::make_shared<fairness::DeterministicCritic>();
  const auto& cfg = market_.config();
  for (AgentId a = 0; a < cfg.num_agents(); ++a) {
    if (!cfg.learns(a)) continue;
    AgentLearner l;
    l.agent = a;
    l.id = cfg.households[static_cast<std::size_t>(a)].id;
    l.net = PolicyNet(cfg.head_sizes(a), train_.hidden);
    Rng init_rng = derive_stream(train_.seed, StreamTag::init, {static_cast<std::uint64_t>(a)});
    l.net.init(init_rng);
    l.adam = Adam(l.net.num_params(), train_.learning_rate);
    learners_.push_back(std::move(l));
  }
}

PolicySet Trainer::policies() const {
  PolicySet set(static_cast<std::size_t>(market_.config().num_agents()));
  for (const auto& l : learners_) set[static_cast<std::size_t>(l.agent)] = std::make_shared<PolicyNet>(l.net);
  return set;
}

void Trainer::restore(int episode, std::vector<AgentLearner> learners) {
  if (learners.size() != learners_.size()) throw ConfigError("checkpoint learner count does not match the scenario");
  for (std::size_t i = 0; i < learners.size(); ++i) {
    const auto& have = learners_[i];
    const auto& got = learners[i];
    if (got.id != have.id || !got.net.compatible_with(have.net.head_sizes(), have.net.hidden())) {
      throw ConfigError("checkpoint for agent '" + got.id + "' is incompatible with the scenario");
    }
    learners[i].agent = have.agent;
  }
  learners_ = std::move(learners);
  episode_ = episode;
}

std::vector<CurveRecord> Trainer::run_episode() {
  const int e = episode_;
  const auto& cfg = market_.config();
  const auto lambdas = shaping_.lambdas(e);
  const auto n = static_cast<std::size_t>(cfg.num_agents());

  Rng episode_rng = derive_stream(train_.seed, StreamTag::episode, {static_cast<std::uint64_t>(e)});
  const std::uint64_t market_seed = episode_rng();
  std::uniform_int_distribution<int> day_dist(0, cfg.horizon_days - train_.episode_days);
  const int start_day = day_dist(episode_rng);
  market_.reset(market_seed, start_day, train_.episode_days);
  if (train_.random_initial_soc) {
    std::uniform_real_distribution<double> frac(0.0, 1.0);
    for (AgentId a = 0; a < cfg.num_agents(); ++a) {
      market_.set_soc(a, frac(episode_rng) * cfg.households[static_cast<std::size_t>(a)].batt_capacity);
    }
  }

  std::vector<Rng> policy_rngs;
  for (const auto& l : learners_) {
    policy_rngs.push_back(derive_stream(train_.seed, StreamTag::policy,
                                        {static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(l.agent)}));
  }
  std::vector<std::vector<Transition>> traj(learners_.size());
  std::vector<CurveRecord> records(learners_.size());
  double ftg_sum = 0.0, fbs_sum = 0.0, fpp_sum = 0.0;
  int slots = 0;

  std::vector<env::Action> actions(n);
  std::vector<ActResult> acted(learners_.size());
  while (!market_.done()) {
    std::vector<std::array<double, kObservationSize>> obs(learners_.size());
    for (std::size_t i = 0; i < learners_.size(); ++i) {
      const auto& l = learners_[i];
      obs[i] = market_.observe(l.agent).features;
      acted[i] = act(l.net, obs[i], policy_rngs[i]);
    }
    for (AgentId a = 0; a < static_cast<AgentId>(n); ++a) actions[static_cast<std::size_t>(a)] = action_for(cfg, a, {});
    for (std::size_t i = 0; i < learners_.size(); ++i) {
      actions[static_cast<std::size_t>(learners_[i].agent)] = env::Action::from_indices(acted[i].action);
    }
    const auto result = market_.step(actions);
    const auto scores = critic_->score(result.ledger).clamped();
    ftg_sum += scores.ftg;
    fbs_sum += scores.fbs;
    fpp_sum += scores.fpp;
    ++slots;
    const Energy sold_total = result.ledger.peer_volume();
    for (std::size_t i = 0; i < learners_.size(); ++i) {
      auto& l = learners_[i];
      const auto a = static_cast<std::size_t>(l.agent);
      const auto& info = result.info[a];
      double shaped = result.rewards.cash[a];
      if (cfg.households[a].is_prosumer()) {
        shaped = fairness::shape(result.rewards.profit[a], scores, lambdas, shaping_, info.sold, sold_total);
      }
      records[i].total_reward += shaped;
      records[i].raw_return += result.rewards.cash[a];
      Transition t;
      t.obs = obs[i];
      t.action = acted[i].action;
      t.mask = info.active_heads;
      t.log_prob = acted[i].log_prob(t.mask);
      t.value = acted[i].value;
      t.reward = train_.normalize_rewards ? l.normalizer.scale(shaped, train_.gamma) : shaped;
      t.done = result.done;
      traj[i].push_back(t);
    }
  }

  TrainConfig update_cfg = train_;
  update_cfg.entropy_coef = train_.entropy_coef_at(e);
  parallel_for(learners_.size(), train_.workers, [&](std::size_t i) {
    auto& l = learners_[i];
    Rng shuffle_rng = derive_stream(train_.seed, StreamTag::shuffle,
                                    {static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(l.agent)});
    auto batch = make_batch(traj[i], 0.0, train_.gamma, train_.gae_lambda);
    ppo_update(l.net, l.adam, std::move(batch), update_cfg, shuffle_rng);
    l.normalizer.end_episode();
  });

  for (std::size_t i = 0; i < learners_.size(); ++i) {
    auto& r = records[i];
    r.episode = e;
    r.agent = learners_[i].id;
    r.ftg = ftg_sum / slots;
    r.fbs = fbs_sum / slots;
    r.fpp = fpp_sum / slots;
    r.lambdas = lambdas;
  }
  ++episode_;
  return records;
}

void Trainer::train(const std::function<void(const std::vector<CurveRecord>&)>& on_episode,
                    const std::function<void(int)>& on_checkpoint) {
  while (episode_ < train_.total_episodes) {
    const auto records = run_episode();
    if (on_episode) on_episode(records);
    if (on_checkpoint && (episode_ % train_.checkpoint_every == 0 || episode_ == train_.total_episodes)) {
      on_checkpoint(episode_);
    }
  }
}

Rollout evaluate(const env::MarketConfig& config, const PolicySet& policies, std::uint64_t seed, int days,
                 bool deterministic) {
  env::Market market(config);
  market.reset(seed, 0, days);
  const auto n = static_cast<std::size_t>(config.num_agents());
  if (policies.size() != n) throw ConfigError("policy set size does not match the scenario");
  std::vector<Rng> rngs;
  for (std::size_t a = 0; a < n; ++a) {
    if (config.learns(static_cast<AgentId>(a)) && !policies[a]) {
      throw ConfigError("no policy for learning agent '" + config.households[a].id + "'");
    }
    rngs.push_back(derive_stream(seed, StreamTag::evaluation, {a}));
  }
  Rollout out;
  std::vector<env::Action> actions(n);
  while (!market.done()) {
    for (std::size_t a = 0; a < n; ++a) {
      const auto agent = static_cast<AgentId>(a);
      if (!config.learns(agent)) {
        actions[a] = env::scripted_consumer_action(config);
        continue;
      }
      const auto r = act(*policies[a], market.observe(agent).features, rngs[a], deterministic);
      actions[a] = env::Action::from_indices(r.action);
    }
    auto result = market.step(actions);
    out.ledgers.push_back(std::move(result.ledger));
    out.rewards.push_back(std::move(result.rewards));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'F', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return v;
}

void put_vec(std::ofstream& out, const Eigen::VectorXd& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_vec(std::ifstream& in, Eigen::VectorXd& v, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw IoError("truncated checkpoint " + path.string());
}

std::string agent_file(const std::string& id) { return "agent_" + id + ".bin"; }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, int episode, const std::vector<AgentLearner>& learners,
                     const nlohmann::json& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& l : learners) {
    const auto path = dir / agent_file(l.id);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put(out, kFormatVersion);
    for (int s : l.net.head_sizes()) put(out, static_cast<std::int32_t>(s));
    put(out, static_cast<std::int32_t>(l.net.hidden()));
    put(out, static_cast<std::uint64_t>(l.net.num_params()));
    put_vec(out, l.net.params());
    const bool has_adam = l.adam.m.size() == l.net.num_params();
    put(out, static_cast<std::uint8_t>(has_adam));
    if (has_adam) {
      put_vec(out, l.adam.m);
      put_vec(out, l.adam.v);
      put(out, l.adam.t);
    }
    put(out, l.normalizer.count);
    put(out, l.normalizer.mean);
    put(out, l.normalizer.m2);
    if (!out) throw IoError("write failed for " + path.string());
    agents.push_back({{"id", l.id},
                      {"file", agent_file(l.id)},
                      {"head_sizes", l.net.head_sizes()},
                      {"hidden", l.net.hidden()},
                      {"num_params", l.net.num_params()}});
  }
  const nlohmann::json sidecar{{"format", "fairmarket-checkpoint"},
                               {"version", kFormatVersion},
                               {"episode", episode},
                               {"agents", agents},
                               {"config", config}};
  std::ofstream meta(dir / "checkpoint.json", std::ios::trunc);
  if (!meta) throw IoError("cannot write " + (dir / "checkpoint.json").string());
  meta << sidecar.dump(2) << '\n';
  if (!meta) throw IoError("write failed for " + (dir / "checkpoint.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto meta_path = dir / "checkpoint.json";
  std::ifstream meta(meta_path);
  if (!meta) throw IoError("missing checkpoint " + meta_path.string());
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint " + meta_path.string() + ": " + e.what());
  }
  Checkpoint ck;
  try {
    if (sidecar.at("format") != "fairmarket-checkpoint" || sidecar.at("version") != kFormatVersion) {
      throw IoError("unsupported checkpoint format in " + meta_path.string());
    }
    ck.episode = sidecar.at("episode").get<int>();
    ck.config = sidecar.value("config", nlohmann::json::object());
    for (const auto& ja : sidecar.at("agents")) {
      const auto path = dir / ja.at("file").get<std::string>();
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("missing checkpoint file " + path.string());
      char magic[sizeof(kMagic)];
      in.read(magic, sizeof(magic));
      if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("bad magic in " + path.string());
      if (get<std::uint32_t>(in, path) != kFormatVersion) throw IoError("unsupported version in " + path.string());
      HeadSizes heads{};
      for (auto& s : heads) s = get<std::int32_t>(in, path);
      const int hidden = get<std::int32_t>(in, path);
      const auto count = get<std::uint64_t>(in, path);
      AgentLearner l;
      l.id = ja.at("id").get<std::string>();
      l.net = PolicyNet(heads, hidden);
      if (count != static_cast<std::uint64_t>(l.net.num_params())) {
        throw IoError("parameter count mismatch in " + path.string());
      }
      get_vec(in, l.net.params(), path);
      if (get<std::uint8_t>(in, path)) {
        l.adam = Adam(l.net.num_params(), 3e-4);
        get_vec(in, l.adam.m, path);
        get_vec(in, l.adam.v, path);
        l.adam.t = get<std::int64_t>(in, path);
      }
      l.normalizer.count = get<double>(in, path);
      l.normalizer.mean = get<double>(in, path);
      l.normalizer.m2 = get<double>(in, path);
      if (!l.net.params().allFinite()) throw IoError("non-finite weights in " + path.string());
      ck.learners.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint " + meta_path.string() + ": " + e.what());
  }
  return ck;
}

PolicySet policies_for(const env::MarketConfig& config, const Checkpoint& checkpoint) {
  PolicySet set(static_cast<std::size_t>(config.num_agents()));
  for (AgentId a = 0; a < config.num_agents(); ++a) {
    if (!config.learns(a)) continue;
    const auto& id = config.households[static_cast<std::size_t>(a)].id;
    const auto it = std::find_if(checkpoint.learners.begin(), checkpoint.learners.end(),
                                 [&](const AgentLearner& l) { return l.id == id; });
    if (it == checkpoint.learners.end()) throw ConfigError("checkpoint has no policy for agent '" + id + "'");
    if (it->net.head_sizes() != config.head_sizes(a)) {
      throw ConfigError("checkpoint action menus for agent '" + id + "' do not match the scenario");
    }
    set[static_cast<std::size_t>(a)] = std::make_shared<PolicyNet>(it->net);
  }
  return set;
}

}  // namespace fairmarket::learner
