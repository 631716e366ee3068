#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "srl4h/trainer/trainer.hpp"

namespace srl4h::testing {

// A trainer small enough for many iterations inside a unit test.
inline trainer::TrainerConfig small_trainer_config(const std::string& method = "none", std::uint64_t seed = 1) {
  trainer::TrainerConfig c;
  c.env.num_envs = 8;
  c.horizon = 16;
  c.network.encoder_hidden = {32};
  c.network.latent_dim = 16;
  c.network.head_hidden = {16};
  c.ppo.epochs = 2;
  c.ppo.minibatches = 2;
  c.srl.method = srl::parse_method(method);
  c.srl.spr_steps = 3;
  c.srl.predictor_hidden = 8;
  c.srl.dynamics_hidden = 16;
  c.srl.decoder_hidden = 16;
  c.srl.vae_latent = 4;
  c.probe_size = 64;
  c.seed = seed;
  return c;
}

// Metrics as JSON without the wall clock.
inline nlohmann::json comparable(const trainer::MetricsRecord& r) {
  auto j = r.to_json();
  j.erase("wall_time");
  return j;
}

inline bool same_bits(const diff::Matrix<float>& a, const diff::Matrix<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool same_agent(const agent::ActorCritic<float>& a, const agent::ActorCritic<float>& b) {
  auto& ma = const_cast<agent::ActorCritic<float>&>(a);
  auto& mb = const_cast<agent::ActorCritic<float>&>(b);
  const auto ta = ma.tensors();
  const auto tb = mb.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!same_bits(*ta[i], *tb[i])) return false;
  }
  return true;
}

// Fixed probe batch in the environment's input layout.
inline diff::Matrix<float> probe_batch(Index dim, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  diff::Matrix<float> m(dim, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(gaussian(rng));
  return m;
}

}  // namespace srl4h::testing
