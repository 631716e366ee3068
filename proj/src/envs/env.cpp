#include "srl4h/envs/env.hpp"

#include <cmath>
#include <numbers>

#include "srl4h/envs/chain_mimic.hpp"
#include "srl4h/envs/config.hpp"
#include "srl4h/envs/planar_velocity.hpp"

namespace srl4h::envs {

std::vector<Index> EnvSpec::privileged_mask() const {
  std::vector<Index> mask;
  for (Index i = proprio_dim(); i < privileged_dim; ++i) mask.push_back(i);
  return mask;
}

Index EnvSpec::term_index(const std::string& term) const {
  for (std::size_t i = 0; i < reward_terms.size(); ++i) {
    if (reward_terms[i].name == term) return static_cast<Index>(i);
  }
  throw ConfigError("env '" + name + "' has no reward term '" + term + "'");
}

double tracking_reward(const Eigen::VectorXd& x, const Eigen::VectorXd& x_ref, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("tracking_reward: sigma must be positive");
  if (x.size() != x_ref.size()) throw ConfigError("tracking_reward: dimension mismatch");
  return std::exp(-(x - x_ref).squaredNorm() / (2.0 * sigma * sigma));
}

double action_smoothness_penalty(const Eigen::VectorXd& a_t, const Eigen::VectorXd& a_prev,
                                 const Eigen::VectorXd& a_prev2) {
  if (a_t.size() != a_prev.size() || a_t.size() != a_prev2.size()) {
    throw ConfigError("action_smoothness_penalty: dimension mismatch");
  }
  return (a_t - 2.0 * a_prev + a_prev2).squaredNorm();
}

double wrap_angle(double theta) {
  constexpr double pi = std::numbers::pi;
  double w = std::remainder(theta, 2.0 * pi);  // [-pi, pi]
  if (w <= -pi) w += 2.0 * pi;
  return w;
}

int EnvConfig::resolved_horizon() const {
  if (horizon > 0) return horizon;
  return name == "chain_mimic" ? 300 : 500;
}

void EnvConfig::validate() const {
  if (name != "planar_velocity" && name != "chain_mimic") {
    throw ConfigError("env.name: unknown environment '" + name + "' (expected planar_velocity or chain_mimic)");
  }
  if (num_envs < 1) throw ConfigError("trainer.num_envs: must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("env.dt: must be positive");
  if (!(sigma > 0.0)) throw ConfigError("env.sigma: must be positive");
  if (!(obs_noise >= 0.0)) throw ConfigError("env.obs_noise: must be >= 0");
  if (!(mass_min > 0.0 && mass_min <= mass_max)) throw ConfigError("env.mass_min/mass_max: need 0 < min <= max");
  if (!(drag_min >= 0.0 && drag_min <= drag_max)) throw ConfigError("env.drag_min/drag_max: need 0 <= min <= max");
  if (horizon < 0) throw ConfigError("env.horizon: must be >= 0 (0 selects the task default)");
  if (num_clips < 1) throw ConfigError("env.num_clips: must be >= 1");
  if (clip_length < 2) throw ConfigError("env.clip_length: must be >= 2");
}

EnvSpec env_spec(const EnvConfig& config) {
  config.validate();
  if (config.name == "chain_mimic") return ChainMimicEnv::make_spec(config);
  return PlanarVelocityEnv::make_spec(config);
}

std::unique_ptr<VecEnv> make_env(const EnvConfig& config) {
  config.validate();
  if (config.name == "chain_mimic") return std::make_unique<ChainMimicEnv>(config);
  return std::make_unique<PlanarVelocityEnv>(config);
}

}  // namespace srl4h::envs
