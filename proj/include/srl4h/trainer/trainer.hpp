#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srl4h/agent/actor_critic.hpp"
#include "srl4h/agent/ppo.hpp"
#include "srl4h/agent/returns.hpp"
#include "srl4h/diff/optim.hpp"
#include "srl4h/envs/config.hpp"
#include "srl4h/srl/srl.hpp"

namespace srl4h::trainer {

using diff::Index;
using diff::Matrix;

enum class IntervalGranularity { kIteration, kGradientStep };

struct TrainerConfig {
  envs::EnvConfig env;
  agent::NetworkConfig network;
  agent::PpoConfig ppo;
  srl::SrlConfig srl;
  int max_iterations = 2000;
  int horizon = 32;  // rollout segment length
  int srl_interval = 1;
  double data_proportion = 1.0;
  IntervalGranularity interval_granularity = IntervalGranularity::kIteration;
  int checkpoint_every = 200;
  bool normalize_rewards = true;
  bool stagger_episodes = true;  // spread initial step counters over the horizon
  int probe_size = 256;          // columns used for the embedding-std probe
  std::uint64_t seed = 1;
  std::string out_dir;

  void validate() const;
};

// Eq. 6 indicator: true iff iteration is a positive multiple of interval.
bool srl_active(long iteration, long interval);

// ceil(proportion * n) distinct indices drawn uniformly without replacement,
// in random order.
std::vector<Index> subsample(Index n, double proportion, Rng& rng);

// Fixed-horizon trajectories. Column t * envs + e holds step t of instance e.
struct RolloutBatch {
  Index steps = 0;
  Index envs = 0;
  Matrix<float> policy_obs;  // [dim x steps*envs]
  Matrix<float> privileged;  // [dim x steps*envs]
  Matrix<float> actions;     // sampled (unclipped) actions [k x steps*envs]
  Matrix<float> old_mean;    // [k x steps*envs]
  Matrix<float> old_std;     // [k x 1]
  Eigen::RowVectorXd old_log_prob;
  Eigen::RowVectorXd old_value;
  Eigen::MatrixXd raw_rewards;  // [steps x envs]
  Eigen::MatrixXd rewards;      // normalized, truncation bootstrap folded in
  Eigen::MatrixXd dones;        // [steps x envs]
  Eigen::VectorXd bootstrap;    // V(s_steps)
  Eigen::MatrixXd terms;        // [num_terms x steps*envs]
  Eigen::RowVectorXd advantages;  // standardized
  Eigen::RowVectorXd returns;

  Index size() const { return steps * envs; }
};

struct MetricsRecord {
  long iteration = 0;
  double wall_time = 0.0;
  double mean_reward = 0.0;                   // mean raw per-step reward of the rollout
  std::optional<double> mean_episode_reward;  // over the last 100 finished episodes
  long episodes_finished = 0;
  std::vector<std::pair<std::string, double>> terms;  // per-step means, unweighted
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  std::optional<double> srl_loss;
  double kl = 0.0;
  double learning_rate = 0.0;
  bool srl_active = false;
  double embedding_std = 0.0;
  int skipped_updates = 0;

  nlohmann::json to_json() const;
  double term(const std::string& name) const;
};

// Per-minibatch report for instrumented runs.
struct UpdateProbe {
  long iteration = 0;
  int epoch = 0;
  int minibatch = 0;
  long gradient_step = 0;
  bool srl_active = false;
  // ||g_total - g_rl|| over agent parameters, with g_rl taken from a separate
  // RL-only graph. Only filled when instrumentation is on.
  double srl_grad_norm = 0.0;
  double srl_grad_norm_policy_encoder = 0.0;
  double srl_grad_norm_value_encoder = 0.0;
};

struct SrlState {
  srl::SrlParams<float> params;
  diff::OptimState<float> optim;
  diff::MlpParams<float> target_encoder;  // SPR only: EMA of the online encoder
};

class Trainer {
 public:
  explicit Trainer(TrainerConfig config);

  const TrainerConfig& config() const { return config_; }
  long iteration() const { return iteration_; }
  long gradient_steps() const { return gradient_steps_; }
  double learning_rate() const { return lr_; }
  const agent::ActorCritic<float>& agent() const { return agent_; }
  agent::ActorCritic<float>& agent() { return agent_; }
  const SrlState& srl_state() const { return srl_; }
  const agent::RewardNormalizer& normalizer() const { return normalizer_; }
  const envs::EnvSpec& env_spec() const { return env_->spec(); }

  void set_instrumented(bool on) { instrumented_ = on; }
  void set_update_hook(std::function<void(const UpdateProbe&)> hook) { hook_ = std::move(hook); }

  RolloutBatch collect_rollouts();
  MetricsRecord train_iteration();

  // Runs until max_iterations. With an output directory this streams
  // metrics.jsonl, writes checkpoints, and resumes from checkpoints/latest.bin
  // when present.
  std::vector<MetricsRecord> run(const std::function<void(const MetricsRecord&)>& on_record = {});

  diff::ArrayArchive to_archive() const;
  void from_archive(const diff::ArrayArchive& archive);
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  struct Minibatch;
  struct Losses;

  bool update_minibatch(const RolloutBatch& batch, const std::vector<Index>& idx, const std::vector<Index>* srl_idx,
                        bool srl_on, int epoch, int mb, Losses& acc);
  void finish_rollout(RolloutBatch& batch);
  double embedding_probe(const RolloutBatch& batch) const;
  std::vector<Index> srl_pool(const RolloutBatch& batch) const;

  TrainerConfig config_;
  std::unique_ptr<envs::VecEnv> env_;
  agent::ActorCritic<float> agent_;
  diff::OptimState<float> optim_;
  SrlState srl_;
  agent::RewardNormalizer normalizer_;
  std::vector<Index> mask_;

  Rng env_rng_;
  Rng action_rng_;
  Rng augment_rng_;
  Rng subsample_rng_;
  Rng shuffle_rng_;

  long iteration_ = 0;
  long gradient_steps_ = 0;
  double lr_ = 1e-3;
  int consecutive_skips_ = 0;
  double wall_offset_ = 0.0;

  Eigen::VectorXd episode_return_;
  std::deque<double> recent_episodes_;
  long episodes_finished_ = 0;
  envs::StepBatch current_;

  bool instrumented_ = false;
  std::function<void(const UpdateProbe&)> hook_;
};

struct TermStats {
  std::string name;
  double mean = 0.0;
  double std = 0.0;
};

struct EvalSummary {
  int episodes = 0;
  double reward_mean = 0.0;  // episode return
  double reward_std = 0.0;
  double length_mean = 0.0;
  std::vector<TermStats> terms;  // per-episode mean of each unweighted term

  nlohmann::json to_json() const;
};

using PolicyFn = std::function<Matrix<float>(const Matrix<float>& policy_obs, Rng& rng)>;

// Runs the first episode of `episodes` fresh instances to completion.
EvalSummary evaluate_policy(const envs::EnvConfig& env, int episodes, std::uint64_t seed, const PolicyFn& policy);
EvalSummary evaluate(const agent::ActorCritic<float>& ac, const envs::EnvConfig& env, int episodes,
                     std::uint64_t seed, bool deterministic = true);
// Loads agent parameters from a checkpoint written by Trainer and evaluates them.
EvalSummary evaluate_checkpoint(const std::filesystem::path& checkpoint, const TrainerConfig& config, int episodes,
                                bool deterministic = true);
// Uniform random actions in [-1, 1].
EvalSummary evaluate_random(const envs::EnvConfig& env, int episodes, std::uint64_t seed);

// Agent parameters only (as stored in a checkpoint).
agent::ActorCritic<float> load_agent(const diff::ArrayArchive& archive, const TrainerConfig& config);

}  // namespace srl4h::trainer
