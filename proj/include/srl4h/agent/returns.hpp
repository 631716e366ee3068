#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "srl4h/diff/archive.hpp"

namespace srl4h::agent {

struct GaeResult {
  Eigen::MatrixXd advantages;  // [steps x envs]
  Eigen::MatrixXd returns;     // advantages + values
};

// Generalized advantage estimation over a [steps x envs] rollout:
//   delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
//   A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
// V_steps is `bootstrap`.
GaeResult gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
              const Eigen::VectorXd& bootstrap, double gamma, double lambda);

// (x - mean) / (std + 1e-8) with the population standard deviation.
Eigen::VectorXd standardize(const Eigen::VectorXd& x);

// Scales rewards by the running standard deviation of a per-environment
// discounted return. No mean is subtracted.
class RewardNormalizer {
 public:
  RewardNormalizer() = default;
  RewardNormalizer(Eigen::Index num_envs, double gamma, double eps = 1e-8);

  Eigen::VectorXd normalize(const Eigen::VectorXd& rewards, const std::vector<std::uint8_t>& dones);

  double count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const { return count_ > 0 ? m2_ / count_ : 0.0; }

  void save(diff::ArrayArchive& archive, const std::string& prefix) const;
  void load(const diff::ArrayArchive& archive, const std::string& prefix);

 private:
  void push(double x);

  double gamma_ = 0.99;
  double eps_ = 1e-8;
  Eigen::VectorXd running_return_;
  double count_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace srl4h::agent
