#include "srl4h/agent/returns.hpp"

#include <cmath>

#include "srl4h/errors.hpp"

namespace srl4h::agent {

GaeResult gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
              const Eigen::VectorXd& bootstrap, double gamma, double lambda) {
  const Eigen::Index steps = rewards.rows();
  const Eigen::Index envs = rewards.cols();
  if (values.rows() != steps || values.cols() != envs || dones.rows() != steps || dones.cols() != envs ||
      bootstrap.size() != envs) {
    throw ConfigError("gae: rewards, values, dones and bootstrap are not aligned");
  }
  GaeResult r;
  r.advantages.resize(steps, envs);
  Eigen::VectorXd next_adv = Eigen::VectorXd::Zero(envs);
  Eigen::VectorXd next_value = bootstrap;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    for (Eigen::Index e = 0; e < envs; ++e) {
      const double not_done = 1.0 - dones(t, e);
      const double delta = rewards(t, e) + gamma * next_value(e) * not_done - values(t, e);
      next_adv(e) = delta + gamma * lambda * not_done * next_adv(e);
      r.advantages(t, e) = next_adv(e);
    }
    next_value = values.row(t).transpose();
  }
  r.returns = r.advantages + values;
  return r;
}

Eigen::VectorXd standardize(const Eigen::VectorXd& x) {
  if (x.size() == 0) return x;
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  return (x.array() - mean) / (std::sqrt(var) + 1e-8);
}

RewardNormalizer::RewardNormalizer(Eigen::Index num_envs, double gamma, double eps)
    : gamma_(gamma), eps_(eps), running_return_(Eigen::VectorXd::Zero(num_envs)) {}

void RewardNormalizer::push(double x) {
  count_ += 1.0;
  const double delta = x - mean_;
  mean_ += delta / count_;
  m2_ += delta * (x - mean_);
}

Eigen::VectorXd RewardNormalizer::normalize(const Eigen::VectorXd& rewards, const std::vector<std::uint8_t>& dones) {
  if (rewards.size() != running_return_.size() || dones.size() != static_cast<std::size_t>(rewards.size())) {
    throw ConfigError("reward normalizer: batch size does not match the number of environments");
  }
  running_return_ = running_return_ * gamma_ + rewards;
  for (Eigen::Index i = 0; i < running_return_.size(); ++i) push(running_return_(i));
  const double scale = 1.0 / std::sqrt(variance() + eps_);
  Eigen::VectorXd out = rewards * scale;
  for (Eigen::Index i = 0; i < running_return_.size(); ++i) {
    if (dones[static_cast<std::size_t>(i)]) running_return_(i) = 0.0;
  }
  return out;
}

void RewardNormalizer::save(diff::ArrayArchive& archive, const std::string& prefix) const {
  archive.put_f64(prefix + "stats", {count_, mean_, m2_, gamma_, eps_});
  archive.put_f64(prefix + "running_return",
                  std::vector<double>(running_return_.data(), running_return_.data() + running_return_.size()));
}

void RewardNormalizer::load(const diff::ArrayArchive& archive, const std::string& prefix) {
  const auto stats = archive.get_f64(prefix + "stats");
  const auto ret = archive.get_f64(prefix + "running_return");
  if (stats.size() != 5) throw ConfigError("reward normalizer: malformed stats array");
  if (ret.size() != static_cast<std::size_t>(running_return_.size())) {
    throw ConfigError("reward normalizer: saved state has " + std::to_string(ret.size()) + " environments, expected " +
                      std::to_string(running_return_.size()));
  }
  count_ = stats[0];
  mean_ = stats[1];
  m2_ = stats[2];
  gamma_ = stats[3];
  eps_ = stats[4];
  running_return_ = Eigen::Map<const Eigen::VectorXd>(ret.data(), static_cast<Eigen::Index>(ret.size()));
}

}  // namespace srl4h::agent
