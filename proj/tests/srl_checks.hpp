#pragma once

#include <algorithm>
#include <cmath>

#include "grad_cases.hpp"
#include "srl4h/diff/optim.hpp"
#include "srl4h/srl/srl.hpp"

namespace srl4h::testing {

// SPR objective written as an explicit loop over windows and steps with
// tape-free forwards.
inline double spr_oracle(const MlpParams<double>& encoder, const MlpParams<double>& target,
                         const MlpParams<double>& dynamics, const std::vector<MatD>& obs,
                         const std::vector<MatD>& acts) {
  const Index windows = obs[0].cols();
  double total = 0.0;
  for (Index w = 0; w < windows; ++w) {
    MatD z = diff::mlp_forward(encoder, MatD(obs[0].col(w)));
    for (std::size_t k = 1; k < obs.size(); ++k) {
      MatD in(z.rows() + acts[k - 1].rows(), 1);
      in << z, acts[k - 1].col(w);
      z = diff::mlp_forward(dynamics, in);
      const MatD g = diff::mlp_forward(target, MatD(obs[k].col(w)));
      for (Index i = 0; i < z.rows(); ++i) total += (z(i, 0) - g(i, 0)) * (z(i, 0) - g(i, 0));
    }
  }
  return total / static_cast<double>(windows);
}

struct SprInstance {
  MlpParams<double> encoder, target, dynamics;
  std::vector<MatD> obs, acts;
};

inline SprInstance random_spr_instance(std::uint64_t seed) {
  Rng rng(seed);
  SprInstance s;
  const Index in = 3 + static_cast<Index>(rng() % 6);
  const Index latent = 2 + static_cast<Index>(rng() % 5);
  const Index act = 1 + static_cast<Index>(rng() % 3);
  const Index steps = 1 + static_cast<Index>(rng() % 5);
  const Index windows = 1 + static_cast<Index>(rng() % 6);
  s.encoder = random_mlp({in, 7, latent}, rng);
  s.target = random_mlp({in, 7, latent}, rng);
  s.dynamics = random_mlp({latent + act, 9, latent}, rng);
  for (Index k = 0; k <= steps; ++k) s.obs.push_back(random_matrix(in, windows, rng));
  for (Index k = 0; k < steps; ++k) s.acts.push_back(random_matrix(act, windows, rng));
  return s;
}

inline double spr_tape_value(const SprInstance& s) {
  Tape<double> t;
  auto e = diff::bind_params(t, s.encoder);
  auto g = diff::bind_params(t, s.target, false);
  auto d = diff::bind_params(t, s.dynamics);
  return t.scalar(srl::spr_loss(t, e, g, d, s.obs, s.acts));
}

struct SgReport {
  double blocked_grad_max = 0.0;    // largest |gradient| reaching a parameter used only under sg
  double surrogate_rel_error = 0.0; // shared-parameter gradient vs finite differences with sg branches frozen
  double unblocked_rel_error = 0.0; // same gradient vs finite differences of the loss without freezing
};

namespace detail {

inline double max_abs_grad(const Tape<double>& t, const MlpVars& v) {
  double m = 0.0;
  for (std::size_t i = 0; i < v.weights.size(); ++i) {
    m = std::max(m, t.grad(v.weights[i]).cwiseAbs().maxCoeff());
    m = std::max(m, t.grad(v.biases[i]).cwiseAbs().maxCoeff());
  }
  return m;
}

inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a(i)), std::abs(n(i)), 1e-12});
    worst = std::max(worst, std::abs(a(i) - n(i)) / d);
  }
  return worst;
}

// Finite differences of `frozen` and `live` at `point`, both compared with `analytic`.
inline void compare(const diff::LossFn& frozen, const diff::LossFn& live, const Eigen::VectorXd& point,
                    const Eigen::VectorXd& analytic, SgReport& rep) {
  auto with = [&analytic](const diff::LossFn& f) {
    return diff::LossFn([f, &analytic](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
      if (g) *g = analytic;
      return f(x, nullptr);
    });
  };
  rep.surrogate_rel_error = diff::finite_diff_check(with(frozen), point, 1e-6).max_relative_error;
  rep.unblocked_rel_error = diff::finite_diff_check(with(live), point, 1e-6).max_relative_error;
}

}  // namespace detail

// kind must be kPvp, kSimSiam or kSpr.
inline SgReport sg_contract(LossKind kind, std::uint64_t seed) {
  using namespace detail;
  Rng rng(seed);
  const std::vector<Index> enc_dims{kIn, kHidden, kLatent};
  const MlpParams<double> enc = random_mlp(enc_dims, rng);
  const MatD x1 = random_matrix(kIn, kBatch, rng);
  const MatD x2 = x1 + random_matrix(kIn, kBatch, rng, 0.3);
  const auto mask = mask_rows();
  SgReport rep;

  if (kind == LossKind::kSpr) {
    const MlpParams<double> dyn = random_mlp({kLatent + kAct, 6, kLatent}, rng);
    std::vector<MatD> obs, acts;
    for (int k = 0; k <= 3; ++k) obs.push_back(random_matrix(kIn, 4, rng));
    for (int k = 0; k < 3; ++k) acts.push_back(random_matrix(kAct, 4, rng));
    // Target as a trainable leaf: the sg must stop everything.
    Tape<double> t;
    auto e = diff::bind_params(t, enc);
    auto g = diff::bind_params(t, enc);
    auto d = diff::bind_params(t, dyn);
    t.backward(srl::spr_loss(t, e, g, d, obs, acts));
    rep.blocked_grad_max = max_abs_grad(t, g);

    // Online encoder shared as target: gradient must equal the frozen-target surrogate.
    Pack p;
    p.mlps = {enc, dyn};
    auto shared = pack_loss(p, [obs, acts](Tape<double>& tt, const PackVars& v) {
      return srl::spr_loss(tt, v.mlps[0], v.mlps[0], v.mlps[1], obs, acts);
    });
    auto frozen = pack_loss(p, [obs, acts, enc](Tape<double>& tt, const PackVars& v) {
      auto tg = diff::bind_params(tt, enc, false);
      return srl::spr_loss(tt, v.mlps[0], tg, v.mlps[1], obs, acts);
    });
    Eigen::VectorXd analytic;
    shared(p.flat(), &analytic);
    compare(frozen, shared, p.flat(), analytic, rep);
    return rep;
  }

  const MlpParams<double> pred = random_mlp({kLatent, 4, kLatent}, rng);
  auto build = [&](Tape<double>& t, const MlpVars& e, const MlpVars& h, const MlpVars* tgt) {
    return kind == LossKind::kPvp ? srl::pvp_loss(t, e, h, x1, mask, tgt) : srl::simsiam_loss(t, e, h, x1, x2, tgt);
  };
  {
    Tape<double> t;
    auto e = diff::bind_params(t, enc);
    auto h = diff::bind_params(t, pred);
    auto g = diff::bind_params(t, enc);  // trainable copy feeding only the sg branches
    t.backward(build(t, e, h, &g));
    rep.blocked_grad_max = max_abs_grad(t, g);
  }
  Pack p;
  p.mlps = {enc, pred};
  auto shared = pack_loss(p, [build](Tape<double>& t, const PackVars& v) { return build(t, v.mlps[0], v.mlps[1], nullptr); });
  auto frozen = pack_loss(p, [build, enc](Tape<double>& t, const PackVars& v) {
    auto tg = diff::bind_params(t, enc, false);
    return build(t, v.mlps[0], v.mlps[1], &tg);
  });
  Eigen::VectorXd analytic;
  shared(p.flat(), &analytic);
  compare(frozen, shared, p.flat(), analytic, rep);
  return rep;
}

// Smallest per-dimension standard deviation of L2-normalized embeddings.
template <typename T>
double min_embedding_std(const diff::Matrix<T>& z) {
  Eigen::MatrixXd zn = z.template cast<double>();
  for (Index j = 0; j < zn.cols(); ++j) zn.col(j) /= std::max(zn.col(j).norm(), srl::kNcsEps);
  const Eigen::VectorXd mean = zn.rowwise().mean();
  return ((zn.colwise() - mean).array().square().rowwise().mean()).sqrt().minCoeff();
}

struct CollapseProbe {
  double mean_std = 0.0;
  double min_std = 0.0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

// Trains encoder and predictor with PvP or SimSiam alone on fixed random data.
inline CollapseProbe collapse_probe(srl::Method method, int steps, std::uint64_t seed) {
  Rng rng(seed);
  const Index in = 59, latent = 32, batch = 256;
  MlpParams<double> enc = MlpParams<double>::uniform_init(std::vector<Index>{in, 64, latent}, rng);
  MlpParams<double> pred = MlpParams<double>::uniform_init(std::vector<Index>{latent, 16, latent}, rng);
  const MatD data = random_matrix(in, batch, rng);
  std::vector<Index> mask{55, 56, 57, 58};
  std::vector<MatD*> params;
  for (auto* p : enc.tensors()) params.push_back(p);
  for (auto* p : pred.tensors()) params.push_back(p);
  auto state = diff::OptimState<double>::for_params(params);
  srl::AugmentParams aug;
  CollapseProbe out;
  for (int s = 0; s < steps; ++s) {
    Tape<double> t;
    auto e = diff::bind_params(t, enc);
    auto h = diff::bind_params(t, pred);
    Var loss;
    if (method == srl::Method::kPvp) {
      loss = srl::pvp_loss(t, e, h, data, mask);
    } else {
      const MatD v1 = srl::augment(data, srl::AugmentOp::kRandomMasking, rng, aug);
      loss = srl::simsiam_loss(t, e, h, v1, data);
    }
    const double value = t.scalar(loss);
    if (s == 0) out.first_loss = value;
    out.last_loss = value;
    t.backward(loss);
    std::vector<MatD> grads;
    for (const MlpVars* m : {&e, &h}) {
      for (std::size_t i = 0; i < m->weights.size(); ++i) {
        grads.push_back(t.grad(m->weights[i]));
        grads.push_back(t.grad(m->biases[i]));
      }
    }
    diff::adam_step<double>(params, grads, state, 1e-3);
  }
  const MatD z = diff::mlp_forward(enc, data);
  out.mean_std = srl::embedding_std(z);
  out.min_std = min_embedding_std(z);
  return out;
}

}  // namespace srl4h::testing
