#include "srl4h/agent/actor_critic.hpp"
#include "srl4h/agent/ppo.hpp"

namespace srl4h::agent {

void NetworkConfig::validate() const {
  for (Index h : encoder_hidden) {
    if (h <= 0) throw ConfigError("agent.encoder_hidden: layer widths must be positive");
  }
  for (Index h : head_hidden) {
    if (h <= 0) throw ConfigError("agent.head_hidden: layer widths must be positive");
  }
  if (latent_dim <= 0) throw ConfigError("agent.latent_dim: must be positive");
  if (!(init_std > 0.0)) throw ConfigError("agent.init_std: must be positive");
  if (!(log_std_min < log_std_max)) throw ConfigError("agent.log_std_min: must be below log_std_max");
}

void PpoConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("agent.gamma: must lie in [0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("agent.gae_lambda: must lie in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("agent.clip: must be positive");
  if (!(entropy_coef >= 0.0)) throw ConfigError("agent.entropy_coef: must be >= 0");
  if (!(value_coef >= 0.0)) throw ConfigError("agent.value_coef: must be >= 0");
  if (!(value_clip > 0.0)) throw ConfigError("agent.value_clip: must be positive");
  if (!(desired_kl > 0.0)) throw ConfigError("agent.desired_kl: must be positive");
  if (!(lr_min > 0.0 && lr_min <= lr_max)) throw ConfigError("agent.lr_min/lr_max: need 0 < min <= max");
  if (!(learning_rate >= lr_min && learning_rate <= lr_max)) {
    throw ConfigError("agent.learning_rate: must lie in [lr_min, lr_max]");
  }
  if (epochs < 1) throw ConfigError("agent.epochs: must be >= 1");
  if (minibatches < 1) throw ConfigError("agent.minibatches: must be >= 1");
  if (!(max_grad_norm > 0.0)) throw ConfigError("agent.max_grad_norm: must be positive");
}

}  // namespace srl4h::agent
