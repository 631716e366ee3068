#pragma once

// Helpers shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "srl4h/diff/grad_check.hpp"
#include "srl4h/diff/mlp.hpp"
#include "srl4h/diff/optim.hpp"
#include "srl4h/diff/tape.hpp"
#include "srl4h/envs/config.hpp"
#include "srl4h/rng.hpp"

namespace srl4h::testing {

using diff::Index;
using diff::Matrix;
using diff::MlpParams;
using diff::MlpVars;
using diff::Tape;
using diff::Var;
using MatD = Matrix<double>;

// A bundle of double-precision MLPs and loose tensors whose entries form the
// coordinates of a gradient check.
struct Pack {
  std::vector<MlpParams<double>> mlps;
  std::vector<MatD> extras;

  std::vector<MatD*> tensors() {
    std::vector<MatD*> out;
    for (auto& m : mlps) {
      for (auto& l : m.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    }
    for (auto& e : extras) out.push_back(&e);
    return out;
  }

  Eigen::VectorXd flat() {
    const auto t = tensors();
    std::vector<const MatD*> c(t.begin(), t.end());
    return diff::flatten<double>(c);
  }

  // Flat index range covering mlps[i].
  std::vector<Index> coords_of_mlp(std::size_t i) const {
    Index offset = 0;
    for (std::size_t k = 0; k < i; ++k) offset += static_cast<Index>(mlps[k].num_params());
    std::vector<Index> out(mlps[i].num_params());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = offset + static_cast<Index>(k);
    return out;
  }
};

struct PackVars {
  std::vector<MlpVars> mlps;
  std::vector<Var> extras;
};

using PackBuilder = std::function<Var(Tape<double>&, const PackVars&)>;

inline PackVars bind(Tape<double>& t, Pack& p) {
  PackVars v;
  for (auto& m : p.mlps) v.mlps.push_back(diff::bind_params(t, m));
  for (auto& e : p.extras) v.extras.push_back(t.leaf(e));
  return v;
}

inline Eigen::VectorXd pack_grads(const Tape<double>& t, const PackVars& v) {
  std::vector<MatD> g;
  for (const auto& m : v.mlps) {
    for (std::size_t i = 0; i < m.weights.size(); ++i) {
      g.push_back(t.grad(m.weights[i]));
      g.push_back(t.grad(m.biases[i]));
    }
  }
  for (Var e : v.extras) g.push_back(t.grad(e));
  std::vector<const MatD*> c;
  for (auto& m : g) c.push_back(&m);
  return diff::flatten<double>(c);
}

// Loss over the flattened pack; the analytic gradient comes from the tape.
inline diff::LossFn pack_loss(Pack pack, PackBuilder build) {
  return [pack, build](const Eigen::VectorXd& x, Eigen::VectorXd* grad) mutable {
    diff::unflatten<double>(x, pack.tensors());
    Tape<double> t;
    PackVars v = bind(t, pack);
    Var loss = build(t, v);
    const double value = t.scalar(loss);
    if (grad) {
      t.backward(loss);
      *grad = pack_grads(t, v);
    }
    return value;
  };
}

inline MlpParams<double> random_mlp(std::vector<Index> dims, Rng& rng, double scale = 1.0) {
  auto p = MlpParams<double>::uniform_init(dims, rng);
  for (auto& l : p.layers) {
    l.weight *= scale;
    l.bias *= scale;
  }
  return p;
}

inline MatD random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  MatD m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * gaussian(rng);
  return m;
}

// Single-layer identity map of width n (weights I, bias 0).
inline MlpParams<double> identity_mlp(Index n) {
  std::vector<Index> dims{n, n};
  auto p = MlpParams<double>::zeros(dims);
  p.layers[0].weight.setIdentity();
  return p;
}

struct LayoutReport {
  long steps = 0;
  long mask_mismatches = 0;        // entries where masked state != policy input (bitwise)
  double max_reward_error = 0.0;   // |reward - sum_i w_i term_i|
  long episodes_done = 0;
};

inline void check_batch(const envs::EnvSpec& spec, const envs::StepBatch& b, LayoutReport& rep) {
  const auto mask = spec.privileged_mask();
  Matrix<float> masked = b.privileged;
  for (Index r : mask) masked.row(r).setZero();
  for (Index i = 0; i < masked.size(); ++i) {
    if (std::memcmp(&masked.data()[i], &b.policy_obs.data()[i], sizeof(float)) != 0) ++rep.mask_mismatches;
  }
  for (Index i = 0; i < b.reward.size(); ++i) {
    double sum = 0.0;
    for (std::size_t t = 0; t < spec.reward_terms.size(); ++t) {
      sum += spec.reward_terms[t].weight * b.terms(static_cast<Index>(t), i);
    }
    rep.max_reward_error = std::max(rep.max_reward_error, std::abs(sum - b.reward(i)));
  }
}

// Steps `env` with uniform random actions in [-1.2, 1.2] (out-of-range entries
// exercise clipping) and checks the masking and reward invariants each step.
inline LayoutReport random_rollout_check(envs::VecEnv& env, int steps, std::uint64_t seed) {
  LayoutReport rep;
  Rng rng(seed);
  const auto& spec = env.spec();
  check_batch(spec, env.reset(seed), rep);
  Matrix<float> a(spec.action_dim, env.num_envs());
  for (int t = 0; t < steps; ++t) {
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = static_cast<float>(uniform(rng, -1.2, 1.2));
    const auto b = env.step(a);
    check_batch(spec, b, rep);
    for (auto d : b.done) rep.episodes_done += d;
    ++rep.steps;
  }
  return rep;
}

// Advantages by direct summation of discounted TD residuals; no recursion.
//   A_t = sum_l (gamma lambda)^l [no done in t..t+l-1] delta_{t+l}
inline Eigen::MatrixXd gae_oracle(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values,
                                  const Eigen::MatrixXd& dones, const Eigen::VectorXd& bootstrap, double gamma,
                                  double lambda) {
  const Index steps = rewards.rows();
  Eigen::MatrixXd adv = Eigen::MatrixXd::Zero(steps, rewards.cols());
  for (Index e = 0; e < rewards.cols(); ++e) {
    auto delta = [&](Index t) {
      const double next = t + 1 < steps ? values(t + 1, e) : bootstrap(e);
      return rewards(t, e) + gamma * next * (1.0 - dones(t, e)) - values(t, e);
    };
    for (Index t = 0; t < steps; ++t) {
      double sum = 0.0;
      for (Index l = 0; t + l < steps; ++l) {
        bool alive = true;
        for (Index m = 0; m < l; ++m) alive = alive && dones(t + m, e) == 0.0;
        if (!alive) break;
        sum += std::pow(gamma * lambda, static_cast<double>(l)) * delta(t + l);
      }
      adv(t, e) = sum;
    }
  }
  return adv;
}

}  // namespace srl4h::testing
