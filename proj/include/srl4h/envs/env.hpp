#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "srl4h/diff/archive.hpp"
#include "srl4h/diff/tape.hpp"

namespace srl4h::envs {

using diff::Index;
using diff::Matrix;

struct RewardTerm {
  std::string name;
  double weight = 0.0;
};

// Static description of an environment's observation layout.
struct EnvSpec {
  std::string name;
  Index frame_dim = 0;       // one proprioceptive frame
  Index frames = 1;          // stacked frames in the policy input
  Index privileged_dim = 0;  // full state dimension (= policy input dimension)
  Index action_dim = 0;
  int horizon = 0;
  std::vector<RewardTerm> reward_terms;

  Index proprio_dim() const { return frame_dim * frames; }
  // Trailing indices that hold privileged-only quantities.
  std::vector<Index> privileged_mask() const;
  Index term_index(const std::string& term) const;
};

// One batched transition. Column j belongs to environment instance j.
struct StepBatch {
  Matrix<float> policy_obs;  // [privileged_dim x n], privileged slots are zero
  Matrix<float> privileged;  // [privileged_dim x n]
  Eigen::VectorXd reward;    // weighted sum of the terms
  Eigen::MatrixXd terms;     // [num_terms x n], unweighted term values
  std::vector<std::uint8_t> done;
  std::vector<std::uint8_t> truncated;  // done because the horizon was reached
  // State reached by the transition before an automatic reset; meaningful
  // only in columns where done is set.
  Matrix<float> terminal_privileged;
};

// Vectorized environment. Instances reset automatically when done; the
// returned observation is then the first observation of the new episode.
class VecEnv {
 public:
  virtual ~VecEnv() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Index num_envs() const = 0;

  virtual StepBatch reset(std::uint64_t seed) = 0;
  virtual StepBatch step(const Matrix<float>& actions) = 0;

  // Current observation without advancing.
  virtual StepBatch observe() const = 0;

  // Complete state (physics, randomized parameters, rng engines) for resuming.
  virtual void save_state(diff::ArrayArchive& archive, const std::string& prefix) const = 0;
  virtual void load_state(const diff::ArrayArchive& archive, const std::string& prefix) = 0;

  // Overrides the step counter of one instance (used to stagger episodes).
  virtual void set_step_count(Index instance, int step) = 0;
};

// exp(-||x - x_ref||^2 / (2 sigma^2))
double tracking_reward(const Eigen::VectorXd& x, const Eigen::VectorXd& x_ref, double sigma);
// ||a_t - 2 a_{t-1} + a_{t-2}||^2
double action_smoothness_penalty(const Eigen::VectorXd& a_t, const Eigen::VectorXd& a_prev,
                                 const Eigen::VectorXd& a_prev2);

// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

}  // namespace srl4h::envs
