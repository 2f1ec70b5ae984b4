#include "fairmarket/config.hpp"

#include <charconv>
#include <fstream>

#include "fairmarket/errors.hpp"
#include "fairmarket/profiles.hpp"
#include "fairmarket/rng.hpp"

namespace fairmarket::config {

using nlohmann::json;

namespace {

json household_json(const profiles::HouseholdSpec& h) {
  return {{"id", h.id},
          {"role", h.is_prosumer() ? "prosumer" : "consumer"},
          {"peak_load", h.peak_load},
          {"peak_pv", h.peak_pv},
          {"pv_owner", h.pv_owner},
          {"has_storage", h.has_storage},
          {"batt_capacity", h.batt_capacity},
          {"batt_p_ch_max", h.batt_p_ch_max},
          {"batt_p_dis_max", h.batt_p_dis_max},
          {"eta_c", h.eta_c},
          {"eta_d", h.eta_d},
          {"q_sell_max", h.q_sell_max},
          {"q_buy_max", h.q_buy_max}};
}

profiles::HouseholdSpec household_from(const json& j) {
  profiles::HouseholdSpec h;
  h.id = j.at("id").get<std::string>();
  const auto role = j.at("role").get<std::string>();
  if (role == "prosumer") {
    h.role = profiles::Role::prosumer;
  } else if (role == "consumer") {
    h.role = profiles::Role::consumer;
  } else {
    throw ConfigError("household '" + h.id + "': role must be \"prosumer\" or \"consumer\"");
  }
  h.peak_load = j.at("peak_load").get<double>();
  h.peak_pv = j.at("peak_pv").get<double>();
  h.pv_owner = j.at("pv_owner").get<bool>();
  h.has_storage = j.at("has_storage").get<bool>();
  h.batt_capacity = j.at("batt_capacity").get<double>();
  h.batt_p_ch_max = j.at("batt_p_ch_max").get<double>();
  h.batt_p_dis_max = j.at("batt_p_dis_max").get<double>();
  h.eta_c = j.at("eta_c").get<double>();
  h.eta_d = j.at("eta_d").get<double>();
  h.q_sell_max = j.at("q_sell_max").get<double>();
  h.q_buy_max = j.at("q_buy_max").get<double>();
  return h;
}

json schedule_json(const fairness::RampSchedule& r) { return {{"start", r.start}, {"full", r.full}}; }

fairness::RampSchedule schedule_from(const json& j) {
  return {j.at("start").get<int>(), j.at("full").get<int>()};
}

std::string type_name(const json& j) {
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

// Overlays `src` onto `dst`, which holds the defaults and therefore the schema.
void merge(json& dst, const json& src, const std::string& path) {
  auto mismatch = [&]() {
    return ConfigError("'" + path + "': expected " + type_name(dst) + ", got " + type_name(src));
  };
  if (path == "households") {
    if (!src.is_array()) throw mismatch();
    const json tmpl = household_json({});
    json out = json::array();
    for (std::size_t i = 0; i < src.size(); ++i) {
      json h = tmpl;
      merge(h, src[i], path + "." + std::to_string(i));
      out.push_back(std::move(h));
    }
    dst = std::move(out);
    return;
  }
  if (dst.is_object()) {
    if (!src.is_object()) throw mismatch();
    for (const auto& [key, value] : src.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      if (!dst.contains(key)) throw ConfigError("unknown config key '" + sub + "'");
      merge(dst[key], value, sub);
    }
    return;
  }
  if (dst.is_array()) {
    if (!src.is_array()) throw mismatch();
    for (const auto& v : src) {
      if (!v.is_number()) throw ConfigError("'" + path + "': expected an array of numbers");
    }
    dst = src;
    return;
  }
  if (dst.is_null()) {
    if (!src.is_null() && !src.is_number()) throw ConfigError("'" + path + "': expected a number or null");
    dst = src;
    return;
  }
  const bool ok = (dst.is_boolean() && src.is_boolean()) || (dst.is_string() && src.is_string()) ||
                  (dst.is_number_integer() && src.is_number_integer()) ||
                  (dst.is_number_float() && src.is_number());
  if (!ok) throw mismatch();
  if (dst.is_number_integer() && src.is_number_integer() && src.get<long long>() < 0 &&
      dst.is_number_unsigned()) {
    throw ConfigError("'" + path + "': must be >= 0");
  }
  dst = src;
}

bool has_path(const json& j, std::initializer_list<const char*> keys) {
  const json* cur = &j;
  for (const char* k : keys) {
    if (!cur->is_object() || !cur->contains(k)) return false;
    cur = &(*cur)[k];
  }
  return true;
}

// Records which ramp schedules were given explicitly so the rest can follow E.
struct Explicit {
  bool grid = false;
  bool price = false;
  bool peer = false;

  void note(const json& src) {
    grid = grid || has_path(src, {"shaping", "grid"});
    price = price || has_path(src, {"shaping", "price"});
    peer = peer || has_path(src, {"shaping", "peer"});
  }
};

ScenarioConfig decode(const json& j, const Explicit& given) {
  ScenarioConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& m = j.at("market");
    c.market.households.clear();
    for (const auto& h : j.at("households")) c.market.households.push_back(household_from(h));
    c.market.tariffs.retail = m.at("tariffs").at("retail").get<Cents>();
    c.market.tariffs.feed_in = m.at("tariffs").at("feed_in").get<Cents>();
    c.market.band.min = m.at("price_band").at("min").get<Cents>();
    c.market.band.max = m.at("price_band").at("max").get<Cents>();
    c.market.quantity_menu = m.at("quantity_menu").get<std::vector<double>>();
    c.market.storage_menu = m.at("storage_menu").get<std::vector<double>>();
    c.market.alpha = m.at("alpha").get<double>();
    c.market.p_sunny = m.at("p_sunny").get<double>();
    c.market.horizon_days = m.at("horizon_days").get<int>();
    c.market.initial_soc_frac = m.at("initial_soc_frac").get<double>();
    c.market.learned_consumers = m.at("learned_consumers").get<bool>();
    c.market.load_scale = m.at("load_scale").get<double>();
    c.market.pv_scale = m.at("pv_scale").get<double>();
    const auto& n = m.at("noise");
    c.market.noise.enabled = n.at("enabled").get<bool>();
    c.market.noise.load_sigma = n.at("load_sigma").get<double>();
    c.market.noise.pv_sigma = n.at("pv_sigma").get<double>();
    c.market.noise.forecast_sigma = n.at("forecast_sigma").get<double>();
    c.templates_csv = j.at("profiles").at("templates_csv").get<std::string>();
    c.empirical_csv = j.at("profiles").at("empirical_csv").get<std::string>();

    const auto& t = j.at("train");
    c.train.total_episodes = t.at("total_episodes").get<int>();
    c.train.gamma = t.at("gamma").get<double>();
    c.train.gae_lambda = t.at("gae_lambda").get<double>();
    c.train.clip = t.at("clip").get<double>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.epochs = t.at("epochs").get<int>();
    c.train.minibatch = t.at("minibatch").get<int>();
    c.train.entropy_coef = t.at("entropy_coef").get<double>();
    if (!t.at("entropy_coef_final").is_null()) c.train.entropy_coef_final = t.at("entropy_coef_final").get<double>();
    c.train.value_coef = t.at("value_coef").get<double>();
    c.train.max_grad_norm = t.at("max_grad_norm").get<double>();
    c.train.hidden = t.at("hidden").get<int>();
    c.train.normalize_rewards = t.at("normalize_rewards").get<bool>();
    c.train.episode_days = t.at("episode_days").get<int>();
    c.train.random_initial_soc = t.at("random_initial_soc").get<bool>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    c.train.seed = c.seed;

    const auto& s = j.at("shaping");
    c.shaping = fairness::ShapingConfig::with_default_schedules(c.train.total_episodes);
    c.shaping.beta_grid = s.at("beta_grid").get<double>();
    c.shaping.beta_price = s.at("beta_price").get<double>();
    c.shaping.beta_peer = s.at("beta_peer").get<double>();
    if (given.grid) c.shaping.grid = schedule_from(s.at("grid"));
    if (given.price) c.shaping.price = schedule_from(s.at("price"));
    if (given.peer) c.shaping.peer = schedule_from(s.at("peer"));

    const auto& cr = j.at("critic");
    c.critic.backend = cr.at("backend").get<std::string>();
    c.critic.remote.url = cr.at("url").get<std::string>();
    c.critic.remote.timeout = std::chrono::milliseconds(cr.at("timeout_ms").get<long long>());
    c.critic.remote.retries = cr.at("retries").get<int>();
    c.critic.remote.prompt_template = cr.at("prompt_template").get<std::string>();

    const auto& ev = j.at("evaluation").at("seed");
    if (!ev.is_null()) {
      if (!ev.is_number_integer() || ev.get<long long>() < 0) throw ConfigError("evaluation.seed must be a non-negative integer");
      c.eval_seed = ev.get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

void apply_set(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const json value = parse_value(assignment.substr(eq + 1));

  json* cur = &tree;
  std::string path;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string seg = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    path += (path.empty() ? "" : ".") + seg;
    if (cur->is_array()) {
      std::size_t idx = 0;
      const auto [p, ec] = std::from_chars(seg.data(), seg.data() + seg.size(), idx);
      if (ec != std::errc() || p != seg.data() + seg.size() || idx >= cur->size()) {
        throw ConfigError("unknown config key '" + path + "'");
      }
      cur = &(*cur)[idx];
    } else if (cur->is_object() && cur->contains(seg)) {
      cur = &(*cur)[seg];
    } else {
      throw ConfigError("unknown config key '" + path + "'");
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  // Array elements of `households` are objects merged against their own schema.
  const bool household_field = key.rfind("households.", 0) == 0;
  merge(*cur, value, household_field ? path : key);
}

}  // namespace

void ScenarioConfig::validate() const {
  market.validate();
  train.validate();
  shaping.validate();
  if (shaping.total_episodes != train.total_episodes) throw ConfigError("shaping and training disagree on E");
  if (critic.backend != "deterministic" && critic.backend != "remote") {
    throw ConfigError("critic.backend must be \"deterministic\" or \"remote\"");
  }
  if (critic.backend == "remote" && critic.remote.url.empty()) throw ConfigError("remote critic needs critic.url");
  if (critic.remote.timeout.count() <= 0) throw ConfigError("critic.timeout_ms must be > 0");
  if (critic.remote.retries < 0) throw ConfigError("critic.retries must be >= 0");
}

std::uint64_t ScenarioConfig::evaluation_seed() const {
  if (eval_seed) return *eval_seed;
  return derive_stream(seed, StreamTag::evaluation)();
}

ScenarioConfig defaults() {
  ScenarioConfig c;
  for (int i = 1; i <= 3; ++i) {
    profiles::HouseholdSpec p;
    p.id = "P" + std::to_string(i);
    p.peak_load = 0.5;
    p.peak_pv = 4.0;
    p.pv_owner = true;
    p.has_storage = true;
    p.batt_capacity = 13.5;
    p.batt_p_ch_max = 5.0;
    p.batt_p_dis_max = 5.0;
    c.market.households.push_back(p);
  }
  for (int i = 1; i <= 2; ++i) {
    profiles::HouseholdSpec q;
    q.id = "C" + std::to_string(i);
    q.role = profiles::Role::consumer;
    q.peak_load = 3.0;
    c.market.households.push_back(q);
  }
  c.train.seed = c.seed;
  c.shaping = fairness::ShapingConfig::with_default_schedules(c.train.total_episodes);
  return c;
}

json to_json(const ScenarioConfig& c) {
  json households = json::array();
  for (const auto& h : c.market.households) households.push_back(household_json(h));
  const auto& m = c.market;
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"households", households},
      {"market",
       {{"tariffs", {{"retail", m.tariffs.retail}, {"feed_in", m.tariffs.feed_in}}},
        {"price_band", {{"min", m.band.min}, {"max", m.band.max}}},
        {"quantity_menu", m.quantity_menu},
        {"storage_menu", m.storage_menu},
        {"alpha", m.alpha},
        {"p_sunny", m.p_sunny},
        {"horizon_days", m.horizon_days},
        {"initial_soc_frac", m.initial_soc_frac},
        {"learned_consumers", m.learned_consumers},
        {"load_scale", m.load_scale},
        {"pv_scale", m.pv_scale},
        {"noise",
         {{"enabled", m.noise.enabled},
          {"load_sigma", m.noise.load_sigma},
          {"pv_sigma", m.noise.pv_sigma},
          {"forecast_sigma", m.noise.forecast_sigma}}}}},
      {"profiles", {{"templates_csv", c.templates_csv}, {"empirical_csv", c.empirical_csv}}},
      {"shaping",
       {{"beta_grid", c.shaping.beta_grid},
        {"beta_price", c.shaping.beta_price},
        {"beta_peer", c.shaping.beta_peer},
        {"grid", schedule_json(c.shaping.grid)},
        {"price", schedule_json(c.shaping.price)},
        {"peer", schedule_json(c.shaping.peer)}}},
      {"train",
       {{"total_episodes", t.total_episodes},
        {"gamma", t.gamma},
        {"gae_lambda", t.gae_lambda},
        {"clip", t.clip},
        {"learning_rate", t.learning_rate},
        {"epochs", t.epochs},
        {"minibatch", t.minibatch},
        {"entropy_coef", t.entropy_coef},
        {"entropy_coef_final", t.entropy_coef_final ? json(*t.entropy_coef_final) : json(nullptr)},
        {"value_coef", t.value_coef},
        {"max_grad_norm", t.max_grad_norm},
        {"hidden", t.hidden},
        {"normalize_rewards", t.normalize_rewards},
        {"episode_days", t.episode_days},
        {"random_initial_soc", t.random_initial_soc},
        {"checkpoint_every", t.checkpoint_every}}},
      {"critic",
       {{"backend", c.critic.backend},
        {"url", c.critic.remote.url},
        {"timeout_ms", static_cast<long long>(c.critic.remote.timeout.count())},
        {"retries", c.critic.remote.retries},
        {"prompt_template", c.critic.remote.prompt_template}}},
      {"evaluation", {{"seed", c.eval_seed ? json(*c.eval_seed) : json(nullptr)}}},
  };
}

ScenarioConfig from_json(const json& j) {
  json tree = to_json(defaults());
  merge(tree, j, "");
  Explicit given;
  given.note(j);
  return decode(tree, given);
}

ScenarioConfig load(const std::optional<std::filesystem::path>& file, std::span<const std::string> sets,
                    const EnvLookup& env) {
  json tree = to_json(defaults());
  Explicit given;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError("cannot open config " + file->string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(file->string() + ": " + e.what());
    }
    merge(tree, j, "");
    given.note(j);
  }
  if (const char* url = env("FAIRMARKET_CRITIC_URL"); url && *url) {
    tree["critic"]["url"] = url;
    tree["critic"]["backend"] = "remote";
  }
  if (const char* ms = env("FAIRMARKET_CRITIC_TIMEOUT_MS"); ms && *ms) {
    long long v = 0;
    const std::string_view s(ms);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v <= 0) {
      throw ConfigError("FAIRMARKET_CRITIC_TIMEOUT_MS must be a positive integer");
    }
    tree["critic"]["timeout_ms"] = v;
  }
  for (const auto& s : sets) {
    apply_set(tree, s);
    const auto key = s.substr(0, s.find('='));
    given.grid = given.grid || key.rfind("shaping.grid", 0) == 0;
    given.price = given.price || key.rfind("shaping.price", 0) == 0;
    given.peer = given.peer || key.rfind("shaping.peer", 0) == 0;
  }
  auto c = decode(tree, given);
  c.validate();
  return c;
}

void materialize(ScenarioConfig& config) {
  if (!config.templates_csv.empty()) config.market.templates = profiles::load_templates_csv(config.templates_csv);
  if (!config.empirical_csv.empty()) {
    auto series = profiles::load_empirical_csv(config.empirical_csv);
    for (const auto& h : config.market.households) {
      if (!series.contains(h.id)) throw ConfigError("empirical profiles have no series for household '" + h.id + "'");
    }
    config.market.empirical = std::make_shared<const profiles::EmpiricalProfiles>(std::move(series));
  }
  config.market.validate();
}

std::shared_ptr<fairness::CriticBackend> make_critic(const ScenarioConfig& config) {
  if (config.critic.backend == "remote") return std::make_shared<fairness::RemoteCritic>(config.critic.remote);
  return std::make_shared<fairness::DeterministicCritic>();
}

}  // namespace fairmarket::config
