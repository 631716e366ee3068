#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "srl4h/agent/actor_critic.hpp"

namespace srl4h::agent {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double value_clip = 0.2;
  double desired_kl = 0.01;
  double learning_rate = 1e-3;
  bool adaptive_lr = true;
  double lr_min = 1e-5;
  double lr_max = 1e-2;
  int epochs = 5;
  int minibatches = 4;
  double max_grad_norm = 0.5;

  void validate() const;
};

// log N(a | mean, exp(log_std)) summed over action dimensions -> [1 x batch].
template <typename T>
Var gaussian_log_prob(Tape<T>& t, Var mean, Var log_std, Var actions) {
  const Index k = t.value(mean).rows();
  const Index b = t.value(mean).cols();
  Var ls = t.broadcast_cols(log_std, b);
  Var inv_std = t.exp(t.scale(ls, T(-1)));
  Var z = t.mul(t.sub(actions, mean), inv_std);
  Var per_dim = t.sub(t.scale(t.square(z), T(-0.5)), ls);
  const T log_norm = static_cast<T>(0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi));
  return t.add_scalar(t.col_sum(per_dim), -log_norm);
}

// Entropy of the diagonal Gaussian: sum(log_std) + k/2 log(2 pi e) -> [1 x 1].
template <typename T>
Var gaussian_entropy(Tape<T>& t, Var log_std) {
  const Index k = t.value(log_std).rows();
  const T c = static_cast<T>(0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi * std::numbers::e));
  return t.add_scalar(t.sum(log_std), c);
}

// -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)), rho = exp(logp_new - logp_old).
template <typename T>
Var ppo_policy_loss(Tape<T>& t, Var logp_new, Var logp_old, Var advantages, T clip) {
  Var ratio = t.exp(t.sub(logp_new, t.stop_gradient(logp_old)));
  Var adv = t.stop_gradient(advantages);
  Var surr1 = t.mul(ratio, adv);
  Var surr2 = t.mul(t.clamp(ratio, T(1) - clip, T(1) + clip), adv);
  return t.scale(t.mean(t.minimum(surr1, surr2)), T(-1));
}

// mean(max((v - R)^2, (v_old + clip(v - v_old, -c, c) - R)^2))
template <typename T>
Var value_loss(Tape<T>& t, Var v_new, Var v_old, Var returns, T clip) {
  Var old = t.stop_gradient(v_old);
  Var ret = t.stop_gradient(returns);
  Var unclipped = t.square(t.sub(v_new, ret));
  Var clipped_v = t.add(old, t.clamp(t.sub(v_new, old), -clip, clip));
  Var clipped = t.square(t.sub(clipped_v, ret));
  return t.mean(t.maximum(unclipped, clipped));
}

// Plain-value conveniences over the tape definitions.
inline double ppo_policy_loss(const Eigen::RowVectorXd& logp_new, const Eigen::RowVectorXd& logp_old,
                              const Eigen::RowVectorXd& adv, double clip) {
  if (logp_new.size() != logp_old.size() || logp_new.size() != adv.size()) {
    throw ConfigError("ppo_policy_loss: batch sizes differ");
  }
  Tape<double> t;
  Var l = ppo_policy_loss(t, t.constant(logp_new), t.constant(logp_old), t.constant(adv), clip);
  return t.scalar(l);
}

inline double value_loss(const Eigen::RowVectorXd& v_new, const Eigen::RowVectorXd& v_old,
                         const Eigen::RowVectorXd& returns, double clip) {
  if (v_new.size() != v_old.size() || v_new.size() != returns.size()) {
    throw ConfigError("value_loss: batch sizes differ");
  }
  Tape<double> t;
  Var l = value_loss(t, t.constant(v_new), t.constant(v_old), t.constant(returns), clip);
  return t.scalar(l);
}

// Mean over the batch of KL(old || new) for diagonal Gaussians.
// old_mean/new_mean: [k x batch]; old_std: [k x batch] or [k x 1]; new_std: [k x 1].
template <typename T>
double gaussian_kl(const Matrix<T>& old_mean, const Matrix<T>& old_std, const Matrix<T>& new_mean,
                   const Matrix<T>& new_std) {
  if (old_mean.rows() != new_mean.rows() || old_mean.cols() != new_mean.cols()) {
    throw ConfigError("gaussian_kl: mean shapes differ");
  }
  const Index k = old_mean.rows();
  const Index b = old_mean.cols();
  double total = 0.0;
  for (Index j = 0; j < b; ++j) {
    for (Index i = 0; i < k; ++i) {
      const double so = static_cast<double>(old_std(i, old_std.cols() == 1 ? 0 : j));
      const double sn = static_cast<double>(new_std(i, new_std.cols() == 1 ? 0 : j));
      const double dm = static_cast<double>(old_mean(i, j)) - static_cast<double>(new_mean(i, j));
      total += std::log(sn / so) + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
    }
  }
  return b > 0 ? total / static_cast<double>(b) : 0.0;
}

// Multiplicative dead-zone schedule: divide by 1.5 above 2x the target KL,
// multiply by 1.5 below half of it, then clamp to [lr_min, lr_max].
inline double adaptive_lr(double kl, double lr, double desired_kl, double lr_min = 1e-5, double lr_max = 1e-2) {
  double next = lr;
  if (kl > 2.0 * desired_kl) {
    next = lr / 1.5;
  } else if (kl < desired_kl / 2.0) {
    next = lr * 1.5;
  }
  return std::clamp(next, lr_min, lr_max);
}

struct KlLrResult {
  double kl = 0.0;
  double lr = 0.0;
};

template <typename T>
KlLrResult kl_and_adaptive_lr(const Matrix<T>& old_mean, const Matrix<T>& old_std, const Matrix<T>& new_mean,
                              const Matrix<T>& new_std, double lr, double desired_kl, double lr_min = 1e-5,
                              double lr_max = 1e-2) {
  const double kl = gaussian_kl(old_mean, old_std, new_mean, new_std);
  return {kl, adaptive_lr(kl, lr, desired_kl, lr_min, lr_max)};
}

}  // namespace srl4h::agent
