#include "fairmarket/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fairmarket/errors.hpp"
#include "fairmarket/log.hpp"

namespace fairmarket::learner {

namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace

PolicyNet::PolicyNet(const HeadSizes& heads, int hidden) : heads_(heads), hidden_(hidden) {
  if (hidden < 1) throw ConfigError("hidden width must be >= 1");
  for (int s : heads) {
    if (s < 1) throw ConfigError("every action head needs at least one option");
  }
  Eigen::Index offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    blocks_.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<Eigen::Index>(rows) * cols;
  };
  add("trunk.w1", hidden, kObservationSize);
  add("trunk.b1", hidden, 1);
  add("trunk.w2", hidden, hidden);
  add("trunk.b2", hidden, 1);
  static constexpr const char* kNames[kNumHeads] = {"ask_price", "ask_qty", "bid_price",
                                                     "bid_qty",   "storage_op", "storage_frac"};
  for (int k = 0; k < kNumHeads; ++k) {
    add(std::string("head.") + kNames[k] + ".w", heads[static_cast<std::size_t>(k)], hidden);
    add(std::string("head.") + kNames[k] + ".b", heads[static_cast<std::size_t>(k)], 1);
  }
  add("value.w", 1, hidden);
  add("value.b", 1, 1);
  theta_ = Eigen::VectorXd::Zero(offset);
}

Eigen::Map<const Eigen::MatrixXd> PolicyNet::block(int id) const { return block(theta_, id); }

Eigen::Map<Eigen::MatrixXd> PolicyNet::block(Eigen::VectorXd& flat, int id) const {
  const auto& b = blocks_.at(static_cast<std::size_t>(id));
  return {flat.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<const Eigen::MatrixXd> PolicyNet::block(const Eigen::VectorXd& flat, int id) const {
  const auto& b = blocks_.at(static_cast<std::size_t>(id));
  return {flat.data() + b.offset, b.rows, b.cols};
}

void PolicyNet::init(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  theta_.setZero();
  auto fill = [&](int id, double gain) {
    auto w = block(theta_, id);
    const double scale = gain / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
    }
  };
  fill(w1, std::sqrt(2.0));
  fill(w2, std::sqrt(2.0));
  for (int k = 0; k < kNumHeads; ++k) fill(head_weight_block(k), 0.01);
  fill(value_weight_block(), 1.0);
}

PolicyNet::Forward PolicyNet::forward(const Eigen::MatrixXd& obs) const {
  if (obs.rows() != kObservationSize) throw std::invalid_argument("observation must have 7 features");
  Forward f;
  f.x = obs;
  f.h1 = ((block(w1) * obs).colwise() + block(b1).col(0)).array().tanh().matrix();
  f.h2 = ((block(w2) * f.h1).colwise() + block(b2).col(0)).array().tanh().matrix();
  for (int k = 0; k < kNumHeads; ++k) {
    Eigen::MatrixXd z = (block(head_weight_block(k)) * f.h2).colwise() + block(head_bias_block(k)).col(0);
    const Eigen::RowVectorXd zmax = z.colwise().maxCoeff();
    z.rowwise() -= zmax;
    const Eigen::RowVectorXd lse = z.array().exp().colwise().sum().log().matrix();
    z.rowwise() -= lse;
    f.log_probs[static_cast<std::size_t>(k)] = z;
    f.probs[static_cast<std::size_t>(k)] = z.array().exp().matrix();
  }
  f.value = (block(value_weight_block()) * f.h2).array() + block(value_bias_block())(0, 0);
  bool ok = all_finite(f.value);
  for (const auto& lp : f.log_probs) ok = ok && all_finite(lp);
  if (!ok) throw InvariantError("policy network produced a non-finite output");
  return f;
}

double ActResult::log_prob(HeadMask mask) const {
  double lp = 0.0;
  for (int k = 0; k < kNumHeads; ++k) {
    if (mask & (HeadMask{1} << k)) lp += head_log_prob[static_cast<std::size_t>(k)];
  }
  return lp;
}

Eigen::VectorXd to_vector(const std::array<double, kObservationSize>& features) {
  Eigen::VectorXd v(kObservationSize);
  for (int i = 0; i < kObservationSize; ++i) v(i) = features[static_cast<std::size_t>(i)];
  return v;
}

int sample_categorical(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left a sliver above the cumulative sum: take the last positive entry.
  for (Eigen::Index i = probs.size() - 1; i > 0; --i) {
    if (probs(i) > 0.0) return static_cast<int>(i);
  }
  return 0;
}

ActResult act(const PolicyNet& net, const std::array<double, kObservationSize>& features, Rng& rng,
              bool deterministic) {
  const auto f = net.forward(to_vector(features));
  ActResult r;
  for (int k = 0; k < kNumHeads; ++k) {
    const auto& p = f.probs[static_cast<std::size_t>(k)];
    int idx = 0;
    if (deterministic) {
      p.col(0).maxCoeff(&idx);
    } else {
      idx = sample_categorical(p.col(0), rng);
    }
    r.action[static_cast<std::size_t>(k)] = idx;
    r.head_log_prob[static_cast<std::size_t>(k)] = f.log_probs[static_cast<std::size_t>(k)](idx, 0);
  }
  r.value = f.value(0);
  return r;
}

ActResult act_deterministic(const PolicyNet& net, const std::array<double, kObservationSize>& features) {
  Rng unused(0);
  return act(net, features, unused, true);
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap_value, double gamma,
              double lambda, std::span<const bool> dones) {
  const std::size_t n = rewards.size();
  if (values.size() != n || (!dones.empty() && dones.size() != n)) {
    throw std::invalid_argument("gae: rewards, values and dones must be aligned");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = (!dones.empty() && dones[i]) ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

void TrainConfig::validate() const {
  if (total_episodes < 0) throw ConfigError("total_episodes must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("clip ratio must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (epochs < 1 || minibatch < 1) throw ConfigError("epochs and minibatch must be >= 1");
  if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) throw ConfigError("loss coefficients must be >= 0");
  if (entropy_coef_final && !(*entropy_coef_final >= 0.0)) throw ConfigError("entropy_coef_final must be >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (episode_days < 1) throw ConfigError("episode_days must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

double TrainConfig::entropy_coef_at(int episode) const {
  if (!entropy_coef_final || total_episodes <= 1) return entropy_coef;
  const double u = std::clamp(static_cast<double>(episode) / (total_episodes - 1), 0.0, 1.0);
  return entropy_coef + u * (*entropy_coef_final - entropy_coef);
}

Batch Batch::subset(std::span<const Eigen::Index> idx) const {
  Batch b;
  const auto n = static_cast<Eigen::Index>(idx.size());
  b.obs.resize(obs.rows(), n);
  b.old_log_prob.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto i = idx[static_cast<std::size_t>(j)];
    b.obs.col(j) = obs.col(i);
    b.actions.push_back(actions[static_cast<std::size_t>(i)]);
    b.masks.push_back(masks[static_cast<std::size_t>(i)]);
    b.old_log_prob(j) = old_log_prob(i);
    b.advantages(j) = advantages(i);
    b.returns(j) = returns(i);
  }
  return b;
}

Batch make_batch(std::span<const Transition> traj, double bootstrap_value, double gamma, double lambda) {
  std::vector<double> rewards, values;
  std::vector<char> done_flags;
  for (const auto& t : traj) {
    rewards.push_back(t.reward);
    values.push_back(t.value);
    done_flags.push_back(t.done ? 1 : 0);
  }
  const std::unique_ptr<bool[]> dones(new bool[traj.size()]);
  for (std::size_t i = 0; i < traj.size(); ++i) dones[i] = done_flags[i] != 0;
  const auto g = gae(rewards, values, bootstrap_value, gamma, lambda, {dones.get(), traj.size()});

  Batch b;
  const auto n = static_cast<Eigen::Index>(traj.size());
  b.obs.resize(kObservationSize, n);
  b.old_log_prob.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = traj[static_cast<std::size_t>(i)];
    b.obs.col(i) = to_vector(t.obs);
    b.actions.push_back(t.action);
    b.masks.push_back(t.mask);
    b.old_log_prob(i) = t.log_prob;
    b.advantages(i) = g.advantages[static_cast<std::size_t>(i)];
    b.returns(i) = g.returns[static_cast<std::size_t>(i)];
  }
  return b;
}

LossTerms loss_and_gradient(const PolicyNet& net, const Batch& batch, const LossConfig& config,
                            Eigen::VectorXd* grad) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto f = net.forward(batch.obs);

  std::array<Eigen::MatrixXd, kNumHeads> dz;
  for (int k = 0; k < kNumHeads; ++k) {
    dz[static_cast<std::size_t>(k)] = Eigen::MatrixXd::Zero(f.probs[static_cast<std::size_t>(k)].rows(), n);
  }
  Eigen::RowVectorXd dv(n);

  LossTerms t;
  int clipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = batch.actions[static_cast<std::size_t>(i)];
    const HeadMask mask = batch.masks[static_cast<std::size_t>(i)];
    double lp = 0.0;
    for (int k = 0; k < kNumHeads; ++k) {
      if (mask & (HeadMask{1} << k)) lp += f.log_probs[static_cast<std::size_t>(k)](a[static_cast<std::size_t>(k)], i);
    }
    const double ratio = std::exp(lp - batch.old_log_prob(i));
    const double adv = batch.advantages(i);
    const double clipped_ratio = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    t.policy -= std::min(ratio * adv, clipped_ratio * adv) * inv_n;
    t.approx_kl += (batch.old_log_prob(i) - lp) * inv_n;
    if (std::abs(ratio - 1.0) > config.clip) ++clipped;
    const bool clip_active = (adv > 0.0 && ratio > 1.0 + config.clip) || (adv < 0.0 && ratio < 1.0 - config.clip);
    const double g_lp = clip_active ? 0.0 : -adv * ratio * inv_n;

    for (int k = 0; k < kNumHeads; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const auto p = f.probs[ks].col(i);
      const auto logp = f.log_probs[ks].col(i);
      const double h = -(p.array() * logp.array()).sum();
      t.entropy += h * inv_n;
      if (!grad) continue;
      auto col = dz[ks].col(i);
      if (mask & (HeadMask{1} << k)) {
        col -= g_lp * p;
        col(a[ks]) += g_lp;
      }
      // d(-c H)/dz_j = c p_j (log p_j + H)
      col.array() += config.entropy_coef * inv_n * p.array() * (logp.array() + h);
    }
    const double err = f.value(i) - batch.returns(i);
    t.value += err * err * inv_n;
    dv(i) = 2.0 * config.value_coef * err * inv_n;
  }
  t.clip_fraction = static_cast<double>(clipped) * inv_n;
  t.total = t.policy + config.value_coef * t.value - config.entropy_coef * t.entropy;
  if (!grad) return t;

  grad->setZero(net.num_params());
  Eigen::MatrixXd dh2 = net.block(PolicyNet::value_weight_block()).transpose() * dv;
  for (int k = 0; k < kNumHeads; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    net.block(*grad, PolicyNet::head_weight_block(k)) = dz[ks] * f.h2.transpose();
    net.block(*grad, PolicyNet::head_bias_block(k)) = dz[ks].rowwise().sum();
    dh2 += net.block(PolicyNet::head_weight_block(k)).transpose() * dz[ks];
  }
  net.block(*grad, PolicyNet::value_weight_block()) = dv * f.h2.transpose();
  net.block(*grad, PolicyNet::value_bias_block())(0, 0) = dv.sum();

  const Eigen::MatrixXd dz2 = (dh2.array() * (1.0 - f.h2.array().square())).matrix();
  net.block(*grad, PolicyNet::w2) = dz2 * f.h1.transpose();
  net.block(*grad, PolicyNet::b2) = dz2.rowwise().sum();
  const Eigen::MatrixXd dz1 =
      ((net.block(PolicyNet::w2).transpose() * dz2).array() * (1.0 - f.h1.array().square())).matrix();
  net.block(*grad, PolicyNet::w1) = dz1 * f.x.transpose();
  net.block(*grad, PolicyNet::b1) = dz1.rowwise().sum();
  return t;
}

Adam::Adam(Eigen::Index n, double lr_, double beta1_, double beta2_, double eps_)
    : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

namespace {

[[noreturn]] void nan_abort(const LossTerms& loss, double grad_norm, const Batch& batch, const char* what) {
  log::warn("nan_dump", {{"what", what},
                         {"policy_loss", loss.policy},
                         {"value_loss", loss.value},
                         {"entropy", loss.entropy},
                         {"grad_norm", grad_norm},
                         {"batch_size", batch.size()},
                         {"adv_min", batch.advantages.size() ? batch.advantages.minCoeff() : 0.0},
                         {"adv_max", batch.advantages.size() ? batch.advantages.maxCoeff() : 0.0},
                         {"ret_min", batch.returns.size() ? batch.returns.minCoeff() : 0.0},
                         {"ret_max", batch.returns.size() ? batch.returns.maxCoeff() : 0.0}});
  throw InvariantError(std::string("ppo_update: ") + what);
}

}  // namespace

UpdateStats ppo_update(PolicyNet& net, Adam& adam, Batch batch, const TrainConfig& config, Rng& shuffle_rng) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("ppo_update needs a non-empty batch");
  if (adam.m.size() != net.num_params()) adam = Adam(net.num_params(), config.learning_rate);
  adam.lr = config.learning_rate;

  const double mean = batch.advantages.mean();
  const double var = (batch.advantages.array() - mean).square().mean();
  batch.advantages = (batch.advantages.array() - mean) / std::max(std::sqrt(var), 1e-8);

  const LossConfig lc{.clip = config.clip, .entropy_coef = config.entropy_coef, .value_coef = config.value_coef};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  UpdateStats stats;
  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (Eigen::Index start = 0; start < n; start += config.minibatch) {
      const auto len = std::min<Eigen::Index>(config.minibatch, n - start);
      const Batch mb = batch.subset(std::span(order).subspan(static_cast<std::size_t>(start),
                                                              static_cast<std::size_t>(len)));
      const auto loss = loss_and_gradient(net, mb, lc, &grad);
      const double norm = grad.norm();
      if (!std::isfinite(loss.total) || !std::isfinite(norm)) nan_abort(loss, norm, mb, "non-finite loss or gradient");
      if (norm > config.max_grad_norm) grad *= config.max_grad_norm / norm;
      adam.step(net.params(), grad);
      if (!net.params().allFinite()) nan_abort(loss, norm, mb, "non-finite parameters after step");
      stats.loss.policy += loss.policy;
      stats.loss.value += loss.value;
      stats.loss.entropy += loss.entropy;
      stats.loss.total += loss.total;
      stats.loss.clip_fraction += loss.clip_fraction;
      stats.loss.approx_kl += loss.approx_kl;
      stats.grad_norm += norm;
      ++stats.steps;
    }
  }
  const double k = 1.0 / stats.steps;
  stats.loss.policy *= k;
  stats.loss.value *= k;
  stats.loss.entropy *= k;
  stats.loss.total *= k;
  stats.loss.clip_fraction *= k;
  stats.loss.approx_kl *= k;
  stats.grad_norm *= k;
  return stats;
}

double ReturnNormalizer::scale(double reward, double gamma) {
  ret = gamma * ret + reward;
  count += 1.0;
  const double delta = ret - mean;
  mean += delta / count;
  m2 += delta * (ret - mean);
  return reward / sd();
}

double ReturnNormalizer::sd() const {
  if (count < 2.0) return 1.0;
  return std::max(std::sqrt(m2 / count), 1.0);
}

}  // namespace fairmarket::learner
