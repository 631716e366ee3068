#include "srl4h/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <utility>

#include "srl4h/errors.hpp"

namespace srl4h::trainer {

namespace {

using Clock = std::chrono::steady_clock;
using diff::Tape;
using diff::Var;

constexpr std::size_t kRecentEpisodes = 100;
constexpr int kMaxConsecutiveSkips = 3;

enum Stream : std::uint64_t { kEnvStream = 0, kActionStream, kAugmentStream, kSubsampleStream, kShuffleStream,
                              kInitStream, kEvalStream = 100 };

Matrix<float> gather(const Matrix<float>& m, const std::vector<Index>& idx) {
  Matrix<float> out(m.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = m.col(idx[j]);
  return out;
}

Matrix<float> gather_row(const Eigen::RowVectorXd& v, const std::vector<Index>& idx) {
  Matrix<float> out(1, static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out(0, static_cast<Index>(j)) = static_cast<float>(v(idx[j]));
  return out;
}

// Log-probabilities through the same graph the update uses, so that the
// first epoch sees a ratio of exactly one.
Eigen::RowVectorXd log_prob(const Matrix<float>& mean, const Matrix<float>& log_std, const Matrix<float>& actions) {
  Tape<float> t;
  Var lp = agent::gaussian_log_prob(t, t.constant(mean), t.constant(log_std), t.constant(actions));
  return t.value(lp).cast<double>();
}

std::vector<Matrix<float>*> mlp_tensors(diff::MlpParams<float>& p) {
  std::vector<Matrix<float>*> out;
  for (auto& l : p.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Matrix<float>*> mlp_tensors(const diff::MlpParams<float>& p) {
  std::vector<const Matrix<float>*> out;
  for (const auto& l : p.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void put_optim(diff::ArrayArchive& a, const std::string& prefix, const diff::OptimState<float>& s,
               const std::vector<std::string>& names) {
  a.put_u64(prefix + "step", {s.step});
  for (std::size_t i = 0; i < names.size(); ++i) {
    a.put_matrix(prefix + "m/" + names[i], s.m[i]);
    a.put_matrix(prefix + "v/" + names[i], s.v[i]);
  }
}

void get_optim(const diff::ArrayArchive& a, const std::string& prefix, diff::OptimState<float>& s,
               const std::vector<std::string>& names) {
  s.step = a.get_u64(prefix + "step").at(0);
  for (std::size_t i = 0; i < names.size(); ++i) {
    s.m[i] = a.get_matrix(prefix + "m/" + names[i], s.m[i].rows(), s.m[i].cols());
    s.v[i] = a.get_matrix(prefix + "v/" + names[i], s.v[i].rows(), s.v[i].cols());
  }
}

double population_std(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(v.size()));
}

}  // namespace

// ---- configuration ----------------------------------------------------------

void TrainerConfig::validate() const {
  env.validate();
  network.validate();
  ppo.validate();
  srl.validate();
  if (max_iterations < 1) throw ConfigError("trainer.max_iterations: must be >= 1");
  if (horizon < 1) throw ConfigError("trainer.horizon: must be >= 1");
  if (srl_interval < 1) throw ConfigError("trainer.srl_interval: must be >= 1");
  if (!(data_proportion > 0.0 && data_proportion <= 1.0)) {
    throw ConfigError("trainer.data_proportion: must lie in (0, 1]");
  }
  if (checkpoint_every < 1) throw ConfigError("trainer.checkpoint_every: must be >= 1");
  if (probe_size < 2) throw ConfigError("logging.probe_size: must be >= 2");
  const long batch = static_cast<long>(horizon) * env.num_envs;
  if (batch < ppo.minibatches) throw ConfigError("agent.minibatches: exceeds the rollout batch size");
  if (srl.method == srl::Method::kSpr && srl.spr_steps >= horizon) {
    throw ConfigError("srl.spr_steps: K = " + std::to_string(srl.spr_steps) + " exceeds the rollout horizon " +
                      std::to_string(horizon));
  }
}

bool srl_active(long iteration, long interval) {
  if (iteration < 1) throw ConfigError("srl_active: iteration must be >= 1");
  if (interval < 1) throw ConfigError("srl_active: interval must be >= 1");
  return iteration % interval == 0;
}

std::vector<Index> subsample(Index n, double proportion, Rng& rng) {
  if (!(proportion > 0.0 && proportion <= 1.0)) throw ConfigError("subsample: proportion must lie in (0, 1]");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto keep = static_cast<std::size_t>(std::ceil(proportion * static_cast<double>(n) - 1e-9));
  idx.resize(std::min(keep, idx.size()));
  return idx;
}

// ---- metrics ------------------------------------------------------------------

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json j;
  j["iteration"] = iteration;
  j["wall_time"] = wall_time;
  j["mean_reward"] = mean_reward;
  j["mean_episode_reward"] = mean_episode_reward ? nlohmann::json(*mean_episode_reward) : nlohmann::json(nullptr);
  j["episodes_finished"] = episodes_finished;
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [name, v] : terms) t[name] = v;
  j["terms"] = t;
  j["policy_loss"] = policy_loss;
  j["value_loss"] = value_loss;
  j["entropy"] = entropy;
  j["srl_loss"] = srl_loss ? nlohmann::json(*srl_loss) : nlohmann::json(nullptr);
  j["kl"] = kl;
  j["learning_rate"] = learning_rate;
  j["srl_active"] = srl_active;
  j["embedding_std"] = embedding_std;
  j["skipped_updates"] = skipped_updates;
  return j;
}

double MetricsRecord::term(const std::string& name) const {
  for (const auto& [n, v] : terms) {
    if (n == name) return v;
  }
  throw ConfigError("metrics: no reward term named '" + name + "'");
}

// ---- trainer -----------------------------------------------------------------

struct Trainer::Losses {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double srl = 0.0;
  double kl = 0.0;
  int count = 0;
  int srl_count = 0;
  int kl_count = 0;
  int skipped = 0;
};

Trainer::Trainer(TrainerConfig config) : config_(std::move(config)) {
  config_.validate();
  env_ = envs::make_env(config_.env);
  const auto& spec = env_->spec();
  mask_ = spec.privileged_mask();

  Rng init_rng(derive_seed(config_.seed, kInitStream));
  agent_ = agent::ActorCritic<float>::create(spec.privileged_dim, spec.action_dim, config_.network, init_rng);
  optim_ = diff::OptimState<float>::for_params(agent_.tensors());
  srl_.params = srl::SrlParams<float>::create(config_.srl, agent_.latent_dim(), spec.privileged_dim,
                                              spec.action_dim, init_rng);
  srl_.optim = diff::OptimState<float>::for_params(srl_.params.tensors());
  if (config_.srl.method == srl::Method::kSpr) srl_.target_encoder = agent_.policy_encoder;

  normalizer_ = agent::RewardNormalizer(config_.env.num_envs, config_.ppo.gamma);
  lr_ = config_.ppo.learning_rate;

  env_rng_.seed(derive_seed(config_.seed, kEnvStream));
  action_rng_.seed(derive_seed(config_.seed, kActionStream));
  augment_rng_.seed(derive_seed(config_.seed, kAugmentStream));
  subsample_rng_.seed(derive_seed(config_.seed, kSubsampleStream));
  shuffle_rng_.seed(derive_seed(config_.seed, kShuffleStream));

  current_ = env_->reset(env_rng_());
  if (config_.stagger_episodes) {
    const int h = spec.horizon;
    for (Index i = 0; i < env_->num_envs(); ++i) {
      env_->set_step_count(i, static_cast<int>(env_rng_() % static_cast<std::uint64_t>(h)));
    }
  }
  episode_return_ = Eigen::VectorXd::Zero(env_->num_envs());
}

RolloutBatch Trainer::collect_rollouts() {
  const auto& spec = env_->spec();
  const Index n = env_->num_envs();
  const Index steps = config_.horizon;
  const Index k = spec.action_dim;
  RolloutBatch b;
  b.steps = steps;
  b.envs = n;
  b.policy_obs.resize(spec.privileged_dim, steps * n);
  b.privileged.resize(spec.privileged_dim, steps * n);
  b.actions.resize(k, steps * n);
  b.old_mean.resize(k, steps * n);
  b.old_std = agent_.log_std.array().exp().matrix();
  b.old_log_prob.resize(steps * n);
  b.old_value.resize(steps * n);
  b.raw_rewards.resize(steps, n);
  b.rewards.resize(steps, n);
  b.dones.resize(steps, n);
  b.terms.resize(static_cast<Index>(spec.reward_terms.size()), steps * n);

  for (Index t = 0; t < steps; ++t) {
    const Index c0 = t * n;
    const auto policy = agent::policy_forward(agent_, current_.policy_obs);
    Matrix<float> actions(k, n);
    for (Index e = 0; e < n; ++e) {
      for (Index i = 0; i < k; ++i) {
        actions(i, e) = policy.mean(i, e) + policy.std(i, 0) * static_cast<float>(gaussian(action_rng_));
      }
    }
    const Matrix<float> values = agent::value_forward(agent_, current_.privileged);
    b.policy_obs.middleCols(c0, n) = current_.policy_obs;
    b.privileged.middleCols(c0, n) = current_.privileged;
    b.actions.middleCols(c0, n) = actions;
    b.old_mean.middleCols(c0, n) = policy.mean;
    b.old_log_prob.segment(c0, n) = log_prob(policy.mean, agent_.log_std, actions);
    b.old_value.segment(c0, n) = values.cast<double>();

    envs::StepBatch next = env_->step(actions.cwiseMax(-1.0f).cwiseMin(1.0f));
    b.raw_rewards.row(t) = next.reward.transpose();
    b.terms.middleCols(c0, n) = next.terms;
    Eigen::VectorXd r = config_.normalize_rewards ? normalizer_.normalize(next.reward, next.done) : next.reward;

    bool any_truncated = false;
    for (Index e = 0; e < n; ++e) any_truncated |= next.truncated[static_cast<std::size_t>(e)] != 0;
    if (any_truncated) {
      const Matrix<float> tv = agent::value_forward(agent_, next.terminal_privileged);
      for (Index e = 0; e < n; ++e) {
        if (next.truncated[static_cast<std::size_t>(e)]) r(e) += config_.ppo.gamma * static_cast<double>(tv(0, e));
      }
    }
    b.rewards.row(t) = r.transpose();
    for (Index e = 0; e < n; ++e) {
      const bool done = next.done[static_cast<std::size_t>(e)] != 0;
      b.dones(t, e) = done ? 1.0 : 0.0;
      episode_return_(e) += next.reward(e);
      if (done) {
        recent_episodes_.push_back(episode_return_(e));
        if (recent_episodes_.size() > kRecentEpisodes) recent_episodes_.pop_front();
        episode_return_(e) = 0.0;
        ++episodes_finished_;
      }
    }
    current_ = std::move(next);
  }
  b.bootstrap = agent::value_forward(agent_, current_.privileged).cast<double>().transpose();
  finish_rollout(b);
  return b;
}

void Trainer::finish_rollout(RolloutBatch& b) {
  const Index steps = b.steps;
  const Index n = b.envs;
  Eigen::MatrixXd values(steps, n);
  for (Index t = 0; t < steps; ++t) values.row(t) = b.old_value.segment(t * n, n);
  const auto g = agent::gae(b.rewards, values, b.dones, b.bootstrap, config_.ppo.gamma, config_.ppo.gae_lambda);
  Eigen::VectorXd adv(steps * n);
  b.returns.resize(steps * n);
  for (Index t = 0; t < steps; ++t) {
    adv.segment(t * n, n) = g.advantages.row(t).transpose();
    b.returns.segment(t * n, n) = g.returns.row(t);
  }
  b.advantages = agent::standardize(adv).transpose();
}

std::vector<Index> Trainer::srl_pool(const RolloutBatch& b) const {
  if (config_.srl.method != srl::Method::kSpr) {
    std::vector<Index> all(static_cast<std::size_t>(b.size()));
    std::iota(all.begin(), all.end(), Index{0});
    return all;
  }
  // Window starts whose next K transitions stay inside one episode.
  const int steps_ahead = config_.srl.spr_steps;
  std::vector<Index> pool;
  for (Index t = 0; t + steps_ahead < b.steps; ++t) {
    for (Index e = 0; e < b.envs; ++e) {
      bool ok = true;
      for (int j = 0; j < steps_ahead && ok; ++j) ok = b.dones(t + j, e) == 0.0;
      if (ok) pool.push_back(t * b.envs + e);
    }
  }
  return pool;
}

bool Trainer::update_minibatch(const RolloutBatch& b, const std::vector<Index>& idx,
                               const std::vector<Index>* srl_idx, bool srl_on, int epoch, int mb, Losses& acc) {
  const auto& ppo = config_.ppo;
  const Matrix<float> x = gather(b.policy_obs, idx);
  const Matrix<float> s = gather(b.privileged, idx);
  const Matrix<float> a = gather(b.actions, idx);
  const Matrix<float> old_lp = gather_row(b.old_log_prob, idx);
  const Matrix<float> old_v = gather_row(b.old_value, idx);
  const Matrix<float> adv = gather_row(b.advantages, idx);
  const Matrix<float> ret = gather_row(b.returns, idx);

  struct RlGraph {
    Var total, policy, value, entropy, mean;
  };
  auto build_rl = [&](Tape<float>& t, const agent::ActorCriticVars<float>& v) {
    RlGraph g;
    g.mean = diff::mlp_forward(t, v.policy_head, diff::mlp_forward(t, v.policy_encoder, t.constant(x)));
    Var lp = agent::gaussian_log_prob(t, g.mean, v.log_std, t.constant(a));
    g.policy = agent::ppo_policy_loss(t, lp, t.constant(old_lp), t.constant(adv), static_cast<float>(ppo.clip));
    g.entropy = agent::gaussian_entropy(t, v.log_std);
    Var val = diff::mlp_forward(t, v.value_head, diff::mlp_forward(t, v.value_encoder, t.constant(s)));
    g.value = agent::value_loss(t, val, t.constant(old_v), t.constant(ret), static_cast<float>(ppo.value_clip));
    g.total = t.add(t.add(g.policy, t.scale(g.value, static_cast<float>(ppo.value_coef))),
                    t.scale(g.entropy, static_cast<float>(-ppo.entropy_coef)));
    return g;
  };

  Tape<float> tape;
  const auto vars = agent::bind_actor_critic(tape, agent_);
  RlGraph rl = build_rl(tape, vars);
  Var total = rl.total;

  const bool with_srl = srl_on && srl_idx != nullptr && !srl_idx->empty();
  srl::SrlVars<float> svars;
  std::optional<double> srl_value;
  if (with_srl) {
    svars = srl::bind_srl(tape, srl_.params);
    srl::SrlBatch<float> sb;
    const auto& sidx = *srl_idx;
    const bool spr = config_.srl.method == srl::Method::kSpr;
    if (spr) {
      const int steps_ahead = config_.srl.spr_steps;
      for (int j = 0; j <= steps_ahead; ++j) {
        std::vector<Index> shifted(sidx.size());
        for (std::size_t i = 0; i < sidx.size(); ++i) shifted[i] = sidx[i] + j * b.envs;
        sb.obs_seq.push_back(gather(b.policy_obs, shifted));
        if (j < steps_ahead) sb.act_seq.push_back(gather(b.actions, shifted).cwiseMax(-1.0f).cwiseMin(1.0f));
      }
    } else {
      sb.states = gather(b.privileged, sidx);
      sb.policy_inputs = gather(b.policy_obs, sidx);
    }
    const diff::MlpVars& enc =
        config_.srl.target == srl::Target::kValueEncoder ? vars.value_encoder : vars.policy_encoder;
    diff::MlpVars target_vars;
    if (spr) target_vars = diff::bind_params(tape, srl_.target_encoder, false);
    Var sl = srl::srl_loss(tape, config_.srl, enc, svars, sb, mask_, augment_rng_, spr ? &target_vars : nullptr);
    srl_value = tape.scalar(sl);
    total = tape.add(total, tape.scale(sl, static_cast<float>(config_.srl.resolved_lambda())));
  }

  // KL between the rollout policy and the current one on this minibatch.
  {
    const Matrix<float> old_mean = gather(b.old_mean, idx);
    const Matrix<float> new_std = agent_.log_std.array().exp().matrix();
    acc.kl += agent::gaussian_kl<float>(old_mean, b.old_std, tape.value(rl.mean), new_std);
    acc.kl_count += 1;
  }

  const float total_value = tape.scalar(total);
  auto finish_skip = [&](const std::string& why) {
    ++acc.skipped;
    ++consecutive_skips_;
    std::cerr << "srl4h: iteration " << iteration_ << " epoch " << epoch << " minibatch " << mb
              << ": skipped update (" << why << ")\n";
    if (consecutive_skips_ >= kMaxConsecutiveSkips) {
      throw RuntimeFailure("aborting: " + std::to_string(kMaxConsecutiveSkips) +
                           " consecutive updates skipped on non-finite values");
    }
    return false;
  };
  if (!std::isfinite(total_value)) return finish_skip("non-finite loss");

  tape.backward(total);
  const auto ac_vars = vars.all();
  std::vector<Matrix<float>> grads;
  grads.reserve(ac_vars.size() + 16);
  for (Var v : ac_vars) grads.push_back(tape.grad(v));
  const std::size_t n_ac = grads.size();
  if (with_srl) {
    for (Var v : svars.all()) grads.push_back(tape.grad(v));
  }

  UpdateProbe probe;
  probe.iteration = iteration_;
  probe.epoch = epoch;
  probe.minibatch = mb;
  probe.gradient_step = gradient_steps_ + 1;
  probe.srl_active = srl_on;
  if (instrumented_) {
    Tape<float> rl_tape;
    const auto rl_vars = agent::bind_actor_critic(rl_tape, agent_);
    RlGraph only = build_rl(rl_tape, rl_vars);
    rl_tape.backward(only.total);
    const auto names = agent_.named_tensors();
    const auto rv = rl_vars.all();
    double sq = 0.0, sq_pol = 0.0, sq_val = 0.0;
    for (std::size_t i = 0; i < n_ac; ++i) {
      const double d = static_cast<double>((grads[i] - rl_tape.grad(rv[i])).squaredNorm());
      sq += d;
      if (names[i].first.starts_with("policy/encoder")) sq_pol += d;
      if (names[i].first.starts_with("value/encoder")) sq_val += d;
    }
    probe.srl_grad_norm = std::sqrt(sq);
    probe.srl_grad_norm_policy_encoder = std::sqrt(sq_pol);
    probe.srl_grad_norm_value_encoder = std::sqrt(sq_val);
  }

  if (!diff::all_finite<float>(grads)) return finish_skip("non-finite gradient");
  diff::clip_grad_norm<float>(grads, ppo.max_grad_norm);

  const auto params = agent_.tensors();
  std::span<const Matrix<float>> ac_grads(grads.data(), n_ac);
  diff::adam_step<float>(params, ac_grads, optim_, lr_);
  if (with_srl) {
    const auto sparams = srl_.params.tensors();
    std::span<const Matrix<float>> s_grads(grads.data() + n_ac, grads.size() - n_ac);
    diff::adam_step<float>(sparams, s_grads, srl_.optim, lr_);
  }
  agent_.clamp_log_std();
  if (config_.srl.method == srl::Method::kSpr) {
    diff::EmaShadow<float> shadow;
    shadow.tau = config_.srl.ema_tau;
    for (auto* m : mlp_tensors(srl_.target_encoder)) shadow.shadow.push_back(*m);
    diff::ema_update<float>(shadow, mlp_tensors(std::as_const(agent_.policy_encoder)));
    auto targets = mlp_tensors(srl_.target_encoder);
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = std::move(shadow.shadow[i]);
  }
  consecutive_skips_ = 0;
  ++gradient_steps_;

  acc.policy += tape.scalar(rl.policy);
  acc.value += tape.scalar(rl.value);
  acc.entropy += tape.scalar(rl.entropy);
  acc.count += 1;
  if (srl_value) {
    acc.srl += *srl_value;
    acc.srl_count += 1;
  }
  if (hook_) hook_(probe);
  return true;
}

double Trainer::embedding_probe(const RolloutBatch& b) const {
  const Index cols = std::min<Index>(config_.probe_size, b.size());
  const bool on_value = config_.srl.target == srl::Target::kValueEncoder;
  const Matrix<float>& src = on_value ? b.privileged : b.policy_obs;
  const auto& enc = on_value ? agent_.value_encoder : agent_.policy_encoder;
  // Spread probe columns over the whole rollout.
  std::vector<Index> idx(static_cast<std::size_t>(cols));
  for (Index j = 0; j < cols; ++j) idx[static_cast<std::size_t>(j)] = (j * b.size()) / cols;
  return srl::embedding_std(diff::mlp_forward(enc, gather(src, idx)));
}

MetricsRecord Trainer::train_iteration() {
  const auto start = Clock::now();
  ++iteration_;
  RolloutBatch b = collect_rollouts();

  const bool has_srl = config_.srl.method != srl::Method::kNone;
  const bool per_iteration = config_.interval_granularity == IntervalGranularity::kIteration;
  const bool iter_active = has_srl && per_iteration && srl_active(iteration_, config_.srl_interval);
  bool any_active = iter_active;

  const Index n = b.size();
  const int mbs = config_.ppo.minibatches;
  Losses acc;
  for (int epoch = 0; epoch < config_.ppo.epochs; ++epoch) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), shuffle_rng_);

    std::vector<Index> srl_sample;
    if (has_srl) {
      const auto pool = srl_pool(b);
      if (pool.empty()) throw RuntimeFailure("no valid SRL samples in the rollout");
      const auto picks = subsample(static_cast<Index>(pool.size()), config_.data_proportion, subsample_rng_);
      srl_sample.reserve(picks.size());
      for (Index p : picks) srl_sample.push_back(pool[static_cast<std::size_t>(p)]);
    }

    acc.kl = 0.0;
    acc.kl_count = 0;
    for (int mb = 0; mb < mbs; ++mb) {
      const std::size_t lo = static_cast<std::size_t>(n) * static_cast<std::size_t>(mb) / static_cast<std::size_t>(mbs);
      const std::size_t hi =
          static_cast<std::size_t>(n) * static_cast<std::size_t>(mb + 1) / static_cast<std::size_t>(mbs);
      std::vector<Index> idx(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));

      std::vector<Index> chunk;
      if (has_srl) {
        const std::size_t m = srl_sample.size();
        const std::size_t slo = m * static_cast<std::size_t>(mb) / static_cast<std::size_t>(mbs);
        const std::size_t shi = m * static_cast<std::size_t>(mb + 1) / static_cast<std::size_t>(mbs);
        chunk.assign(srl_sample.begin() + static_cast<std::ptrdiff_t>(slo),
                     srl_sample.begin() + static_cast<std::ptrdiff_t>(shi));
      }
      bool on = iter_active;
      if (has_srl && !per_iteration) on = srl_active(gradient_steps_ + 1, config_.srl_interval);
      any_active |= on;
      update_minibatch(b, idx, has_srl ? &chunk : nullptr, on, epoch, mb, acc);
    }
    const double kl = acc.kl_count > 0 ? acc.kl / acc.kl_count : 0.0;
    if (config_.ppo.adaptive_lr) {
      lr_ = agent::adaptive_lr(kl, lr_, config_.ppo.desired_kl, config_.ppo.lr_min, config_.ppo.lr_max);
    }
  }

  MetricsRecord r;
  r.iteration = iteration_;
  r.mean_reward = b.raw_rewards.mean();
  if (!recent_episodes_.empty()) {
    r.mean_episode_reward =
        std::accumulate(recent_episodes_.begin(), recent_episodes_.end(), 0.0) / static_cast<double>(recent_episodes_.size());
  }
  r.episodes_finished = episodes_finished_;
  const auto& spec = env_->spec();
  for (std::size_t i = 0; i < spec.reward_terms.size(); ++i) {
    r.terms.emplace_back(spec.reward_terms[i].name, b.terms.row(static_cast<Index>(i)).mean());
  }
  if (acc.count > 0) {
    r.policy_loss = acc.policy / acc.count;
    r.value_loss = acc.value / acc.count;
    r.entropy = acc.entropy / acc.count;
  }
  if (acc.srl_count > 0) r.srl_loss = acc.srl / acc.srl_count;
  r.kl = acc.kl_count > 0 ? acc.kl / acc.kl_count : 0.0;
  r.learning_rate = lr_;
  r.srl_active = any_active;
  r.embedding_std = embedding_probe(b);
  r.skipped_updates = acc.skipped;
  wall_offset_ += std::chrono::duration<double>(Clock::now() - start).count();
  r.wall_time = wall_offset_;
  return r;
}

// ---- persistence -----------------------------------------------------------

diff::ArrayArchive Trainer::to_archive() const {
  diff::ArrayArchive a;
  auto& self = const_cast<Trainer&>(*this);
  std::vector<std::string> ac_names;
  for (auto& [name, m] : self.agent_.named_tensors()) {
    a.put_matrix(name, *m);
    ac_names.push_back(name);
  }
  std::vector<std::string> srl_names;
  for (auto& [name, m] : self.srl_.params.named_tensors()) {
    a.put_matrix(name, *m);
    srl_names.push_back(name);
  }
  for (std::size_t i = 0; i < srl_.target_encoder.layers.size(); ++i) {
    a.put_matrix("srl/target_encoder/" + std::to_string(i) + "/weight", srl_.target_encoder.layers[i].weight);
    a.put_matrix("srl/target_encoder/" + std::to_string(i) + "/bias", srl_.target_encoder.layers[i].bias);
  }
  put_optim(a, "optim/agent/", optim_, ac_names);
  put_optim(a, "optim/srl/", srl_.optim, srl_names);
  normalizer_.save(a, "normalizer/");
  env_->save_state(a, "env/");
  a.put_string("rng/env", rng_state(env_rng_));
  a.put_string("rng/action", rng_state(action_rng_));
  a.put_string("rng/augment", rng_state(augment_rng_));
  a.put_string("rng/subsample", rng_state(subsample_rng_));
  a.put_string("rng/shuffle", rng_state(shuffle_rng_));
  a.put_u64("trainer/counters", {static_cast<std::uint64_t>(iteration_), static_cast<std::uint64_t>(gradient_steps_),
                                 static_cast<std::uint64_t>(consecutive_skips_),
                                 static_cast<std::uint64_t>(episodes_finished_)});
  a.put_f64("trainer/learning_rate", {lr_});
  a.put_f64("trainer/wall_time", {wall_offset_});
  a.put_f64("trainer/episode_return",
            std::vector<double>(episode_return_.data(), episode_return_.data() + episode_return_.size()));
  a.put_f64("trainer/recent_episodes", std::vector<double>(recent_episodes_.begin(), recent_episodes_.end()));
  return a;
}

void Trainer::from_archive(const diff::ArrayArchive& a) {
  std::vector<std::string> ac_names;
  for (auto& [name, m] : agent_.named_tensors()) {
    *m = a.get_matrix(name, m->rows(), m->cols());
    ac_names.push_back(name);
  }
  std::vector<std::string> srl_names;
  for (auto& [name, m] : srl_.params.named_tensors()) {
    *m = a.get_matrix(name, m->rows(), m->cols());
    srl_names.push_back(name);
  }
  for (std::size_t i = 0; i < srl_.target_encoder.layers.size(); ++i) {
    auto& l = srl_.target_encoder.layers[i];
    l.weight = a.get_matrix("srl/target_encoder/" + std::to_string(i) + "/weight", l.weight.rows(), l.weight.cols());
    l.bias = a.get_matrix("srl/target_encoder/" + std::to_string(i) + "/bias", l.bias.rows(), l.bias.cols());
  }
  get_optim(a, "optim/agent/", optim_, ac_names);
  get_optim(a, "optim/srl/", srl_.optim, srl_names);
  normalizer_.load(a, "normalizer/");
  env_->load_state(a, "env/");
  set_rng_state(env_rng_, a.get_string("rng/env"));
  set_rng_state(action_rng_, a.get_string("rng/action"));
  set_rng_state(augment_rng_, a.get_string("rng/augment"));
  set_rng_state(subsample_rng_, a.get_string("rng/subsample"));
  set_rng_state(shuffle_rng_, a.get_string("rng/shuffle"));
  const auto counters = a.get_u64("trainer/counters");
  if (counters.size() != 4) throw ConfigError("checkpoint: malformed trainer/counters");
  iteration_ = static_cast<long>(counters[0]);
  gradient_steps_ = static_cast<long>(counters[1]);
  consecutive_skips_ = static_cast<int>(counters[2]);
  episodes_finished_ = static_cast<long>(counters[3]);
  lr_ = a.get_f64("trainer/learning_rate").at(0);
  wall_offset_ = a.get_f64("trainer/wall_time").at(0);
  const auto ep = a.get_f64("trainer/episode_return");
  if (ep.size() != static_cast<std::size_t>(episode_return_.size())) {
    throw ConfigError("checkpoint: trainer/episode_return has " + std::to_string(ep.size()) + " entries, expected " +
                      std::to_string(episode_return_.size()));
  }
  episode_return_ = Eigen::Map<const Eigen::VectorXd>(ep.data(), static_cast<Index>(ep.size()));
  const auto recent = a.get_f64("trainer/recent_episodes");
  recent_episodes_.assign(recent.begin(), recent.end());
  current_ = env_->observe();
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { to_archive().save(path); }

void Trainer::load_checkpoint(const std::filesystem::path& path) { from_archive(diff::ArrayArchive::load(path)); }

std::vector<MetricsRecord> Trainer::run(const std::function<void(const MetricsRecord&)>& on_record) {
  namespace fs = std::filesystem;
  std::vector<MetricsRecord> records;
  const bool persist = !config_.out_dir.empty();
  fs::path out(config_.out_dir);
  fs::path ckpt_dir = out / "checkpoints";
  fs::path latest = ckpt_dir / "latest.bin";
  fs::path metrics_path = out / "metrics.jsonl";
  std::ofstream metrics;
  if (persist) {
    fs::create_directories(ckpt_dir);
    if (fs::exists(latest)) {
      load_checkpoint(latest);
      // Drop records written after the checkpoint so the stream stays one line per iteration.
      std::vector<std::string> keep;
      std::ifstream in(metrics_path);
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("iteration") && j["iteration"].get<long>() <= iteration_) {
          keep.push_back(line);
        }
      }
      in.close();
      std::ofstream rewrite(metrics_path, std::ios::trunc);
      for (const auto& l : keep) rewrite << l << '\n';
      metrics.open(metrics_path, std::ios::app);
    } else {
      // nothing to resume from: stale lines from an interrupted start go too
      metrics.open(metrics_path, std::ios::trunc);
    }
    if (!metrics) throw RuntimeFailure("cannot open " + metrics_path.string() + " for writing");
  }

  while (iteration_ < config_.max_iterations) {
    MetricsRecord r = train_iteration();
    if (persist) {
      metrics << r.to_json().dump() << '\n';
      metrics.flush();
      if (iteration_ % config_.checkpoint_every == 0 || iteration_ == config_.max_iterations) {
        char name[32];
        std::snprintf(name, sizeof(name), "ckpt_%06ld.bin", iteration_);
        save_checkpoint(ckpt_dir / name);
        save_checkpoint(latest);
      }
    }
    if (on_record) on_record(r);
    records.push_back(std::move(r));
  }
  return records;
}

// ---- evaluation ---------------------------------------------------------------

nlohmann::json EvalSummary::to_json() const {
  nlohmann::json j;
  j["episodes"] = episodes;
  j["reward_mean"] = reward_mean;
  j["reward_std"] = reward_std;
  j["length_mean"] = length_mean;
  nlohmann::json t = nlohmann::json::object();
  for (const auto& s : terms) t[s.name] = {{"mean", s.mean}, {"std", s.std}};
  j["terms"] = t;
  return j;
}

EvalSummary evaluate_policy(const envs::EnvConfig& env_cfg, int episodes, std::uint64_t seed, const PolicyFn& policy) {
  if (episodes <= 0) throw ConfigError("evaluate: episodes must be >= 1 (got " + std::to_string(episodes) + ")");
  envs::EnvConfig cfg = env_cfg;
  cfg.num_envs = episodes;
  cfg.validate();
  auto env = envs::make_env(cfg);
  const auto& spec = env->spec();
  const auto nterms = spec.reward_terms.size();
  Rng rng(derive_seed(seed, kEvalStream));
  envs::StepBatch cur = env->reset(derive_seed(seed, kEnvStream));

  const auto n = static_cast<std::size_t>(episodes);
  std::vector<double> ret(n, 0.0), len(n, 0.0);
  std::vector<std::vector<double>> term_sum(nterms, std::vector<double>(n, 0.0));
  std::vector<bool> finished(n, false);
  std::size_t remaining = n;
  while (remaining > 0) {
    Matrix<float> a = policy(cur.policy_obs, rng).cwiseMax(-1.0f).cwiseMin(1.0f);
    envs::StepBatch next = env->step(a);
    for (std::size_t e = 0; e < n; ++e) {
      if (finished[e]) continue;
      const auto col = static_cast<Index>(e);
      ret[e] += next.reward(col);
      len[e] += 1.0;
      for (std::size_t k = 0; k < nterms; ++k) term_sum[k][e] += next.terms(static_cast<Index>(k), col);
      if (next.done[e]) {
        finished[e] = true;
        --remaining;
      }
    }
    cur = std::move(next);
  }

  EvalSummary s;
  s.episodes = episodes;
  s.reward_mean = std::accumulate(ret.begin(), ret.end(), 0.0) / static_cast<double>(n);
  s.reward_std = population_std(ret, s.reward_mean);
  s.length_mean = std::accumulate(len.begin(), len.end(), 0.0) / static_cast<double>(n);
  for (std::size_t k = 0; k < nterms; ++k) {
    std::vector<double> per_ep(n);
    for (std::size_t e = 0; e < n; ++e) per_ep[e] = term_sum[k][e] / len[e];
    const double mean = std::accumulate(per_ep.begin(), per_ep.end(), 0.0) / static_cast<double>(n);
    s.terms.push_back({spec.reward_terms[k].name, mean, population_std(per_ep, mean)});
  }
  return s;
}

EvalSummary evaluate(const agent::ActorCritic<float>& ac, const envs::EnvConfig& env, int episodes,
                     std::uint64_t seed, bool deterministic) {
  return evaluate_policy(env, episodes, seed, [&ac, deterministic](const Matrix<float>& obs, Rng& rng) {
    const auto out = agent::policy_forward(ac, obs);
    if (deterministic) return out.mean;
    Matrix<float> a = out.mean;
    for (Index j = 0; j < a.cols(); ++j) {
      for (Index i = 0; i < a.rows(); ++i) a(i, j) += out.std(i, 0) * static_cast<float>(gaussian(rng));
    }
    return a;
  });
}

EvalSummary evaluate_random(const envs::EnvConfig& env, int episodes, std::uint64_t seed) {
  const Index k = envs::env_spec(env).action_dim;
  return evaluate_policy(env, episodes, seed, [k](const Matrix<float>& obs, Rng& rng) {
    Matrix<float> a(k, obs.cols());
    for (Index j = 0; j < a.cols(); ++j) {
      for (Index i = 0; i < k; ++i) a(i, j) = static_cast<float>(uniform(rng, -1.0, 1.0));
    }
    return a;
  });
}

agent::ActorCritic<float> load_agent(const diff::ArrayArchive& archive, const TrainerConfig& config) {
  const auto spec = envs::env_spec(config.env);
  Rng dummy(0);
  auto ac = agent::ActorCritic<float>::create(spec.privileged_dim, spec.action_dim, config.network, dummy);
  for (auto& [name, m] : ac.named_tensors()) *m = archive.get_matrix(name, m->rows(), m->cols());
  return ac;
}

EvalSummary evaluate_checkpoint(const std::filesystem::path& checkpoint, const TrainerConfig& config, int episodes,
                                bool deterministic) {
  if (episodes <= 0) throw ConfigError("evaluate: episodes must be >= 1 (got " + std::to_string(episodes) + ")");
  const auto ac = load_agent(diff::ArrayArchive::load(checkpoint), config);
  return evaluate(ac, config.env, episodes, config.seed, deterministic);
}

}  // namespace srl4h::trainer
