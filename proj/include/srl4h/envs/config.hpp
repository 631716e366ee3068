#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "srl4h/envs/env.hpp"

namespace srl4h::envs {

struct EnvConfig {
  std::string name = "planar_velocity";  // or "chain_mimic"
  int num_envs = 64;
  double dt = 0.02;
  double sigma = 0.25;      // exponential tracking kernel width
  double obs_noise = 0.05;  // accelerometer / joint-velocity noise std
  double mass_min = 0.8;
  double mass_max = 1.2;
  double drag_min = 0.05;
  double drag_max = 0.15;
  int horizon = 0;  // 0 selects the task default (500 velocity, 300 mimic)
  // chain_mimic only
  int num_clips = 8;
  int clip_length = 300;
  std::uint64_t reference_seed = 42;

  int resolved_horizon() const;
  void validate() const;
};

std::unique_ptr<VecEnv> make_env(const EnvConfig& config);
EnvSpec env_spec(const EnvConfig& config);

}  // namespace srl4h::envs
