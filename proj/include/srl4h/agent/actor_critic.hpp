#pragma once

#include <string>
#include <utility>
#include <vector>

#include "srl4h/diff/mlp.hpp"
#include "srl4h/diff/tape.hpp"

namespace srl4h::agent {

using diff::Index;
using diff::Matrix;
using diff::MlpParams;
using diff::MlpVars;
using diff::Tape;
using diff::Var;

struct NetworkConfig {
  std::vector<Index> encoder_hidden = {512, 256};
  Index latent_dim = 128;
  std::vector<Index> head_hidden = {128};
  double init_std = 1.0;
  double log_std_min = -4.0;
  double log_std_max = 2.0;

  void validate() const;
};

// Policy encoder + head with a state-independent log-std, and a value
// encoder + head. Both encoders take inputs of the privileged dimension: the
// policy sees the zero-masked state, the critic sees the full state.
template <typename T>
struct ActorCritic {
  MlpParams<T> policy_encoder;
  MlpParams<T> policy_head;
  MlpParams<T> value_encoder;
  MlpParams<T> value_head;
  Matrix<T> log_std;  // [action_dim x 1]
  double log_std_min = -4.0;
  double log_std_max = 2.0;

  static ActorCritic create(Index input_dim, Index action_dim, const NetworkConfig& cfg, Rng& rng) {
    cfg.validate();
    if (input_dim <= 0 || action_dim <= 0) throw ConfigError("actor_critic: dimensions must be positive");
    ActorCritic ac;
    auto dims = [](Index in, const std::vector<Index>& hidden, Index out) {
      std::vector<Index> d{in};
      d.insert(d.end(), hidden.begin(), hidden.end());
      d.push_back(out);
      return d;
    };
    const auto enc = dims(input_dim, cfg.encoder_hidden, cfg.latent_dim);
    const auto pol = dims(cfg.latent_dim, cfg.head_hidden, action_dim);
    const auto val = dims(cfg.latent_dim, cfg.head_hidden, 1);
    ac.policy_encoder = MlpParams<T>::uniform_init(enc, rng);
    ac.policy_head = MlpParams<T>::uniform_init(pol, rng);
    ac.value_encoder = MlpParams<T>::uniform_init(enc, rng);
    ac.value_head = MlpParams<T>::uniform_init(val, rng);
    ac.log_std = Matrix<T>::Constant(action_dim, 1, static_cast<T>(std::log(cfg.init_std)));
    ac.log_std_min = cfg.log_std_min;
    ac.log_std_max = cfg.log_std_max;
    return ac;
  }

  Index input_dim() const { return policy_encoder.input_dim(); }
  Index action_dim() const { return log_std.rows(); }
  Index latent_dim() const { return policy_encoder.output_dim(); }

  // Named tensors in a fixed order (checkpoint and optimizer layout).
  std::vector<std::pair<std::string, Matrix<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Matrix<T>*>> out;
    auto add = [&out](const std::string& prefix, MlpParams<T>& p) {
      for (std::size_t i = 0; i < p.layers.size(); ++i) {
        out.emplace_back(prefix + "/" + std::to_string(i) + "/weight", &p.layers[i].weight);
        out.emplace_back(prefix + "/" + std::to_string(i) + "/bias", &p.layers[i].bias);
      }
    };
    add("policy/encoder", policy_encoder);
    add("policy/head", policy_head);
    out.emplace_back("policy/log_std", &log_std);
    add("value/encoder", value_encoder);
    add("value/head", value_head);
    return out;
  }

  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for (auto& [name, ptr] : named_tensors()) out.push_back(ptr);
    return out;
  }

  void clamp_log_std() {
    log_std = log_std.cwiseMax(static_cast<T>(log_std_min)).cwiseMin(static_cast<T>(log_std_max));
  }

  template <typename U>
  ActorCritic<U> cast() const {
    ActorCritic<U> out;
    out.policy_encoder = policy_encoder.template cast<U>();
    out.policy_head = policy_head.template cast<U>();
    out.value_encoder = value_encoder.template cast<U>();
    out.value_head = value_head.template cast<U>();
    out.log_std = log_std.template cast<U>();
    out.log_std_min = log_std_min;
    out.log_std_max = log_std_max;
    return out;
  }
};

template <typename T>
struct PolicyOutput {
  Matrix<T> mean;  // [k x batch]
  Matrix<T> std;   // [k x 1]
};

// Tape-free policy evaluation on a batch of zero-masked observations.
template <typename T>
PolicyOutput<T> policy_forward(const ActorCritic<T>& ac, const Matrix<T>& x) {
  Matrix<T> z = diff::mlp_forward(ac.policy_encoder, x);
  PolicyOutput<T> out{diff::mlp_forward(ac.policy_head, z), ac.log_std.array().exp().matrix()};
  if (!out.mean.allFinite() || !out.std.allFinite()) {
    throw RuntimeFailure("policy_forward: non-finite policy output (mean finite: " +
                         std::string(out.mean.allFinite() ? "yes" : "no") + ", std finite: " +
                         std::string(out.std.allFinite() ? "yes" : "no") + ")");
  }
  return out;
}

// Tape-free value evaluation -> [1 x batch].
template <typename T>
Matrix<T> value_forward(const ActorCritic<T>& ac, const Matrix<T>& s) {
  return diff::mlp_forward(ac.value_head, diff::mlp_forward(ac.value_encoder, s));
}

template <typename T>
struct ActorCriticVars {
  MlpVars policy_encoder;
  MlpVars policy_head;
  Var log_std;
  MlpVars value_encoder;
  MlpVars value_head;

  // Same order as ActorCritic::named_tensors().
  std::vector<Var> all() const {
    std::vector<Var> out;
    auto add = [&out](const MlpVars& m) {
      for (std::size_t i = 0; i < m.weights.size(); ++i) {
        out.push_back(m.weights[i]);
        out.push_back(m.biases[i]);
      }
    };
    add(policy_encoder);
    add(policy_head);
    out.push_back(log_std);
    add(value_encoder);
    add(value_head);
    return out;
  }
};

template <typename T>
ActorCriticVars<T> bind_actor_critic(Tape<T>& tape, const ActorCritic<T>& ac) {
  ActorCriticVars<T> v;
  v.policy_encoder = diff::bind_params(tape, ac.policy_encoder);
  v.policy_head = diff::bind_params(tape, ac.policy_head);
  v.log_std = tape.leaf(ac.log_std);
  v.value_encoder = diff::bind_params(tape, ac.value_encoder);
  v.value_head = diff::bind_params(tape, ac.value_head);
  return v;
}

}  // namespace srl4h::agent
