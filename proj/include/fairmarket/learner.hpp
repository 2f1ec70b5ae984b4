#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairmarket/environment.hpp"
#include "fairmarket/fairness.hpp"
#include "fairmarket/rng.hpp"
#include "json.hpp"

namespace fairmarket::learner {

using env::HeadMask;
using env::HeadSizes;
using env::kNumHeads;
using env::kObservationSize;

inline constexpr HeadMask kAllHeads = (HeadMask{1} << kNumHeads) - 1;

/// Shared tanh trunk (7 -> hidden -> hidden), one categorical head per action
/// component and a scalar value head. All weights live in one flat vector.
class PolicyNet {
 public:
  struct Block {
    std::string name;
    int rows = 0;
    int cols = 0;
    Eigen::Index offset = 0;
  };

  PolicyNet() = default;
  PolicyNet(const HeadSizes& heads, int hidden);

  /// Scaled-normal initialization; policy heads start near uniform.
  void init(Rng& rng);

  const HeadSizes& head_sizes() const { return heads_; }
  int hidden() const { return hidden_; }
  Eigen::Index num_params() const { return theta_.size(); }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  enum BlockId : int { w1 = 0, b1, w2, b2, head_w0 };
  static int head_weight_block(int head) { return head_w0 + 2 * head; }
  static int head_bias_block(int head) { return head_w0 + 2 * head + 1; }
  static int value_weight_block() { return head_w0 + 2 * kNumHeads; }
  static int value_bias_block() { return head_w0 + 2 * kNumHeads + 1; }

  Eigen::Map<const Eigen::MatrixXd> block(int id) const;
  Eigen::Map<Eigen::MatrixXd> block(Eigen::VectorXd& flat, int id) const;
  Eigen::Map<const Eigen::MatrixXd> block(const Eigen::VectorXd& flat, int id) const;

  struct Forward {
    Eigen::MatrixXd x;   // 7 x B
    Eigen::MatrixXd h1;  // hidden x B
    Eigen::MatrixXd h2;  // hidden x B
    std::array<Eigen::MatrixXd, kNumHeads> probs;     // size_k x B
    std::array<Eigen::MatrixXd, kNumHeads> log_probs; // size_k x B
    Eigen::RowVectorXd value;                         // 1 x B
  };

  /// Batched forward pass over observation columns. Throws InvariantError on
  /// non-finite outputs.
  Forward forward(const Eigen::MatrixXd& obs) const;

  bool compatible_with(const HeadSizes& heads, int hidden) const { return heads == heads_ && hidden == hidden_; }

 private:
  HeadSizes heads_{};
  int hidden_ = 0;
  std::vector<Block> blocks_;
  Eigen::VectorXd theta_;
};

struct ActResult {
  std::array<int, kNumHeads> action{};
  std::array<double, kNumHeads> head_log_prob{};
  double value = 0.0;

  /// Joint log-probability over the heads selected by `mask`.
  double log_prob(HeadMask mask = kAllHeads) const;
};

Eigen::VectorXd to_vector(const std::array<double, kObservationSize>& features);

/// Samples every head independently, or takes the per-head argmax.
ActResult act(const PolicyNet& net, const std::array<double, kObservationSize>& features, Rng& rng,
              bool deterministic = false);
ActResult act_deterministic(const PolicyNet& net, const std::array<double, kObservationSize>& features);

/// Index drawn from the categorical distribution `probs` with one uniform draw.
int sample_categorical(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Recursive generalized advantage estimation; `dones[t]` cuts bootstrapping
/// after step t. Empty `dones` means no terminal inside the trajectory.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, double bootstrap_value, double gamma,
              double lambda, std::span<const bool> dones = {});

struct TrainConfig {
  int total_episodes = 10000;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double learning_rate = 3e-4;
  int epochs = 4;
  int minibatch = 256;
  double entropy_coef = 0.01;
  /// When set, the entropy coefficient moves linearly from `entropy_coef` at
  /// episode 0 to this value at the last episode.
  std::optional<double> entropy_coef_final;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int hidden = 64;
  /// Scale rewards by a running estimate of the discounted-return spread.
  bool normalize_rewards = true;
  int episode_days = 1;
  /// Draw each training episode's initial SOC uniformly from [0, capacity].
  bool random_initial_soc = false;
  int checkpoint_every = 500;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const;
  double entropy_coef_at(int episode) const;
};

/// One transition of a single agent.
struct Transition {
  std::array<double, kObservationSize> obs{};
  std::array<int, kNumHeads> action{};
  HeadMask mask = 0;
  double log_prob = 0.0;  // joint over `mask`
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
};

struct Batch {
  Eigen::MatrixXd obs;  // 7 x B
  std::vector<std::array<int, kNumHeads>> actions;
  std::vector<HeadMask> masks;
  Eigen::VectorXd old_log_prob;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return obs.cols(); }
  Batch subset(std::span<const Eigen::Index> idx) const;
};

/// Builds a batch from one trajectory: GAE over shaped rewards, returns as
/// advantage + value.
Batch make_batch(std::span<const Transition> traj, double bootstrap_value, double gamma, double lambda);

struct LossTerms {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct LossConfig {
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
};

/// Clipped surrogate + value MSE - entropy bonus, averaged over the batch.
/// Advantages are used as given. `grad` (if non-null) receives dL/dtheta.
LossTerms loss_and_gradient(const PolicyNet& net, const Batch& batch, const LossConfig& config,
                            Eigen::VectorXd* grad);

class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct UpdateStats {
  LossTerms loss;  // averaged over minibatch steps
  double grad_norm = 0.0;  // mean pre-clip global norm
  int steps = 0;
};

/// Normalizes advantages (mean 0, sd 1, sd guarded at 1e-8), then runs
/// `epochs` passes of shuffled minibatch Adam steps with global-norm clipping.
/// Throws InvariantError (after logging a diagnostic dump) on a NaN loss or
/// non-finite parameters.
UpdateStats ppo_update(PolicyNet& net, Adam& adam, Batch batch, const TrainConfig& config, Rng& shuffle_rng);

/// Running variance of the discounted return used to scale rewards. The
/// divisor is floored at 1, so rewards are only ever shrunk.
struct ReturnNormalizer {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  double ret = 0.0;

  /// Feeds one reward and returns it divided by the running return sd.
  double scale(double reward, double gamma);
  void end_episode() { ret = 0.0; }
  double sd() const;
};

struct AgentLearner {
  AgentId agent = 0;
  std::string id;
  PolicyNet net;
  Adam adam;
  ReturnNormalizer normalizer;
};

struct CurveRecord {
  int episode = 0;
  std::string agent;
  double total_reward = 0.0;
  double raw_return = 0.0;
  double ftg = 1.0;
  double fbs = 1.0;
  double fpp = 1.0;
  fairness::Lambdas lambdas;
};

nlohmann::json to_json(const CurveRecord& record);

/// Per-agent policies for rollouts; null entries are scripted.
using PolicySet = std::vector<std::shared_ptr<const PolicyNet>>;

struct Rollout {
  std::vector<auction::SlotLedger> ledgers;
  std::vector<env::RawRewards> rewards;
};

/// Frozen-policy evaluation over `days` days starting at day 0.
Rollout evaluate(const env::MarketConfig& config, const PolicySet& policies, std::uint64_t seed, int days,
                 bool deterministic = true);

class Trainer {
 public:
  Trainer(env::MarketConfig market, fairness::ShapingConfig shaping, TrainConfig train,
          std::shared_ptr<fairness::CriticBackend> critic = nullptr);

  /// Runs one training episode and updates every learning agent.
  std::vector<CurveRecord> run_episode();

  /// Runs until `total_episodes`, calling `on_episode` after each episode and
  /// `on_checkpoint` every `checkpoint_every` episodes and at the end.
  void train(const std::function<void(const std::vector<CurveRecord>&)>& on_episode,
             const std::function<void(int)>& on_checkpoint = {});

  int episode() const { return episode_; }
  const std::vector<AgentLearner>& learners() const { return learners_; }
  std::vector<AgentLearner>& learners() { return learners_; }
  PolicySet policies() const;

  const env::MarketConfig& market_config() const { return market_.config(); }
  const TrainConfig& train_config() const { return train_; }
  const fairness::ShapingConfig& shaping_config() const { return shaping_; }

  /// Replaces learner state and the episode counter (resume).
  void restore(int episode, std::vector<AgentLearner> learners);

 private:
  env::Market market_;
  fairness::ShapingConfig shaping_;
  TrainConfig train_;
  std::shared_ptr<fairness::CriticBackend> critic_;
  std::vector<AgentLearner> learners_;
  int episode_ = 0;
};

/// Writes `checkpoint.json` (sidecar) and one `agent_<id>.bin` per learner.
void save_checkpoint(const std::filesystem::path& dir, int episode, const std::vector<AgentLearner>& learners,
                     const nlohmann::json& config);

struct Checkpoint {
  int episode = 0;
  nlohmann::json config;
  std::vector<AgentLearner> learners;
};

/// Throws IoError on missing/corrupt files.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Matches checkpointed learners to the scenario by id; throws ConfigError on
/// any menu, observation or architecture mismatch.
PolicySet policies_for(const env::MarketConfig& config, const Checkpoint& checkpoint);

}  // namespace fairmarket::learner
