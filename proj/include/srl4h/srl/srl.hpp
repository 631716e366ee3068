#pragma once

// State-representation objectives that share an RL encoder: PvP
// (privileged/proprioceptive pairs), SimSiam, SPR and a VAE.

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srl4h/diff/mlp.hpp"
#include "srl4h/diff/tape.hpp"
#include "srl4h/rng.hpp"

namespace srl4h::srl {

using diff::Index;
using diff::Matrix;
using diff::MlpParams;
using diff::MlpVars;
using diff::Tape;
using diff::Var;

enum class Method { kNone, kPvp, kSimSiam, kSpr, kVae };
enum class Target { kPolicyEncoder, kValueEncoder };
enum class AugmentOp { kRandomMasking, kGaussianNoise, kRandomAmplitudeScaling, kIdentityMapping };

Method parse_method(const std::string& s);
Target parse_target(const std::string& s);
AugmentOp parse_augment(const std::string& s);
std::string to_string(Method m);
std::string to_string(Target t);
std::string to_string(AugmentOp a);

double default_lambda(Method m);
std::vector<AugmentOp> default_augment(Method m);

struct AugmentParams {
  double mask_prob = 0.1;
  double noise_std = 0.05;
  double scale_min = 0.8;
  double scale_max = 1.2;
};

struct SrlConfig {
  Method method = Method::kNone;
  std::optional<double> lambda;  // unset: per-method default
  Target target = Target::kPolicyEncoder;
  std::vector<AugmentOp> augment;  // unset (empty): per-method default
  int spr_steps = 5;
  double ema_tau = 0.99;
  Index vae_latent = 16;
  Index predictor_hidden = 64;
  Index dynamics_hidden = 128;
  Index decoder_hidden = 128;
  AugmentParams augment_params;

  double resolved_lambda() const { return lambda ? *lambda : default_lambda(method); }
  std::vector<AugmentOp> resolved_augment() const { return augment.empty() ? default_augment(method) : augment; }
  void validate() const;
};

// ---- primitives -----------------------------------------------------------

// Copy of s with exact zeros in the rows listed in mask. Works column-wise on batches.
template <typename T>
Matrix<T> zero_masking(const Matrix<T>& s, std::span<const Index> mask) {
  Matrix<T> out = s;
  for (Index i : mask) {
    if (i < 0 || i >= s.rows()) {
      throw ConfigError("zero_masking: index " + std::to_string(i) + " outside [0, " + std::to_string(s.rows()) + ")");
    }
    out.row(i).setZero();
  }
  return out;
}

inline constexpr double kNcsEps = 1e-8;

// Negative cosine similarity per column: -(p/|p|) . (z/|z|) -> [1 x batch].
template <typename T>
Var d_ncs(Tape<T>& t, Var p, Var z) {
  return t.scale(t.col_dot(t.col_normalize(p, static_cast<T>(kNcsEps)), t.col_normalize(z, static_cast<T>(kNcsEps))),
                 T(-1));
}

double d_ncs(const Eigen::VectorXd& p, const Eigen::VectorXd& z);

template <typename T>
Matrix<T> augment(const Matrix<T>& x, AugmentOp op, Rng& rng, const AugmentParams& params = {}) {
  Matrix<T> out = x;
  switch (op) {
    case AugmentOp::kIdentityMapping:
      break;
    case AugmentOp::kRandomMasking:
      for (Index j = 0; j < out.cols(); ++j) {
        for (Index i = 0; i < out.rows(); ++i) {
          if (uniform(rng, 0.0, 1.0) < params.mask_prob) out(i, j) = T(0);
        }
      }
      break;
    case AugmentOp::kGaussianNoise:
      for (Index j = 0; j < out.cols(); ++j) {
        for (Index i = 0; i < out.rows(); ++i) out(i, j) += static_cast<T>(params.noise_std * gaussian(rng));
      }
      break;
    case AugmentOp::kRandomAmplitudeScaling:
      for (Index j = 0; j < out.cols(); ++j) out.col(j) *= static_cast<T>(uniform(rng, params.scale_min, params.scale_max));
      break;
  }
  return out;
}

// ---- losses -----------------------------------------------------------------
//
// Each builder appends its graph to the tape and returns a [1 x 1] node.
// `target` optionally names a separate parameter binding for the branches
// that sit under stop-gradient; when null the online binding is used.

// D(p, sg(z~)) + D(p~, sg(z)), averaged over the batch, with
// z = f(s), z~ = f(mask(s)), p = h(z), p~ = h(z~).
template <typename T>
Var pvp_loss(Tape<T>& t, const MlpVars& encoder, const MlpVars& predictor, const Matrix<T>& states,
             std::span<const Index> mask, const MlpVars* target = nullptr) {
  if (states.cols() == 0) throw ConfigError("pvp_loss: empty batch");
  Var s = t.constant(states);
  Var s_masked = t.constant(zero_masking(states, mask));
  Var z = diff::mlp_forward(t, encoder, s);
  Var z_masked = diff::mlp_forward(t, encoder, s_masked);
  Var p = diff::mlp_forward(t, predictor, z);
  Var p_masked = diff::mlp_forward(t, predictor, z_masked);
  Var z_tgt = target ? diff::mlp_forward(t, *target, s) : z;
  Var z_masked_tgt = target ? diff::mlp_forward(t, *target, s_masked) : z_masked;
  Var a = d_ncs(t, p, t.stop_gradient(z_masked_tgt));
  Var b = d_ncs(t, p_masked, t.stop_gradient(z_tgt));
  return t.mean(t.add(a, b));
}

// 1/2 [D(h(f(x1)), sg(f(x2))) + D(h(f(x2)), sg(f(x1)))], averaged over the batch.
template <typename T>
Var simsiam_loss(Tape<T>& t, const MlpVars& encoder, const MlpVars& predictor, const Matrix<T>& view1,
                 const Matrix<T>& view2, const MlpVars* target = nullptr) {
  if (view1.cols() == 0) throw ConfigError("simsiam_loss: empty batch");
  Var x1 = t.constant(view1);
  Var x2 = t.constant(view2);
  Var z1 = diff::mlp_forward(t, encoder, x1);
  Var z2 = diff::mlp_forward(t, encoder, x2);
  Var p1 = diff::mlp_forward(t, predictor, z1);
  Var p2 = diff::mlp_forward(t, predictor, z2);
  Var z1_tgt = target ? diff::mlp_forward(t, *target, x1) : z1;
  Var z2_tgt = target ? diff::mlp_forward(t, *target, x2) : z2;
  Var a = d_ncs(t, p1, t.stop_gradient(z2_tgt));
  Var b = d_ncs(t, p2, t.stop_gradient(z1_tgt));
  return t.scale(t.mean(t.add(a, b)), T(0.5));
}

// Multi-step latent prediction. observations[k] holds o_{t+k} for k = 0..K as
// [dim x windows]; actions[k] holds a_{t+k} for k = 0..K-1.
//   z_t = f(o_t),  z^_{t+k} = dyn([z^_{t+k-1}; a_{t+k-1}])
//   loss = mean over windows of sum_k ||z^_{t+k} - sg(g(o_{t+k}))||^2
template <typename T>
Var spr_loss(Tape<T>& t, const MlpVars& encoder, const MlpVars& target_encoder, const MlpVars& dynamics,
             const std::vector<Matrix<T>>& observations, const std::vector<Matrix<T>>& actions) {
  const std::size_t steps = actions.size();
  if (steps == 0) throw ConfigError("spr_loss: need at least one prediction step");
  if (observations.size() != steps + 1) throw ConfigError("spr_loss: need K+1 observations for K actions");
  const Index windows = observations[0].cols();
  if (windows == 0) throw ConfigError("spr_loss: no valid windows");
  Var z = diff::mlp_forward(t, encoder, t.constant(observations[0]));
  Var total;
  for (std::size_t k = 1; k <= steps; ++k) {
    z = diff::mlp_forward(t, dynamics, t.concat_rows(z, t.constant(actions[k - 1])));
    Var tgt = t.stop_gradient(diff::mlp_forward(t, target_encoder, t.constant(observations[k])));
    Var err = t.sum(t.square(t.sub(z, tgt)));
    total = total.valid() ? t.add(total, err) : err;
  }
  return t.scale(total, T(1) / static_cast<T>(windows));
}

struct VaeTerms {
  Var total;           // mean(recon + kl)
  Var reconstruction;  // mean of 1/2 ||x - dec(z)||^2
  Var kl;              // mean of 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma)
};

inline constexpr double kVaeLogStdMin = -6.0;
inline constexpr double kVaeLogStdMax = 2.0;

// z = mu + sigma * noise with noise ~ N(0, I) supplied by the caller ([latent x batch]).
template <typename T>
VaeTerms vae_loss(Tape<T>& t, const MlpVars& encoder, const MlpVars& mu_head, const MlpVars& log_std_head,
                  const MlpVars& decoder, const Matrix<T>& inputs, const Matrix<T>& noise) {
  if (inputs.cols() == 0) throw ConfigError("vae_loss: empty batch");
  Var x = t.constant(inputs);
  Var h = diff::mlp_forward(t, encoder, x);
  Var mu = diff::mlp_forward(t, mu_head, h);
  Var log_std = t.clamp(diff::mlp_forward(t, log_std_head, h), static_cast<T>(kVaeLogStdMin),
                        static_cast<T>(kVaeLogStdMax));
  if (noise.rows() != t.value(mu).rows() || noise.cols() != inputs.cols()) {
    throw ConfigError("vae_loss: noise must be [latent x batch]");
  }
  Var sigma = t.exp(log_std);
  Var z = t.add(mu, t.mul(sigma, t.constant(noise)));
  Var recon = diff::mlp_forward(t, decoder, z);
  Var rec_term = t.scale(t.col_sum(t.square(t.sub(x, recon))), T(0.5));
  Var kl_inner = t.sub(t.add_scalar(t.add(t.square(mu), t.exp(t.scale(log_std, T(2)))), T(-1)), t.scale(log_std, T(2)));
  Var kl_term = t.scale(t.col_sum(kl_inner), T(0.5));
  VaeTerms out;
  out.reconstruction = t.mean(rec_term);
  out.kl = t.mean(kl_term);
  out.total = t.mean(t.add(rec_term, kl_term));
  return out;
}

// ---- parameters -----------------------------------------------------------

// Parameters owned by the SRL objective (the encoder itself is shared with
// the agent and not stored here).
template <typename T>
struct SrlParams {
  MlpParams<T> predictor;      // PvP, SimSiam: latent -> hidden -> latent
  MlpParams<T> dynamics;       // SPR: (latent + k) -> hidden -> latent
  MlpParams<T> vae_mu;         // VAE: latent -> vae_latent
  MlpParams<T> vae_log_std;    // VAE: latent -> vae_latent
  MlpParams<T> vae_decoder;    // VAE: vae_latent -> hidden -> input_dim

  static SrlParams create(const SrlConfig& cfg, Index latent_dim, Index input_dim, Index action_dim, Rng& rng) {
    SrlParams p;
    switch (cfg.method) {
      case Method::kPvp:
      case Method::kSimSiam: {
        const std::vector<Index> d{latent_dim, cfg.predictor_hidden, latent_dim};
        p.predictor = MlpParams<T>::uniform_init(d, rng);
        break;
      }
      case Method::kSpr: {
        const std::vector<Index> d{latent_dim + action_dim, cfg.dynamics_hidden, latent_dim};
        p.dynamics = MlpParams<T>::uniform_init(d, rng);
        break;
      }
      case Method::kVae: {
        const std::vector<Index> head{latent_dim, cfg.vae_latent};
        const std::vector<Index> dec{cfg.vae_latent, cfg.decoder_hidden, input_dim};
        p.vae_mu = MlpParams<T>::uniform_init(head, rng);
        p.vae_log_std = MlpParams<T>::uniform_init(head, rng);
        p.vae_decoder = MlpParams<T>::uniform_init(dec, rng);
        break;
      }
      case Method::kNone:
        break;
    }
    return p;
  }

  std::vector<std::pair<std::string, Matrix<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Matrix<T>*>> out;
    auto add = [&out](const std::string& prefix, MlpParams<T>& m) {
      for (std::size_t i = 0; i < m.layers.size(); ++i) {
        out.emplace_back(prefix + "/" + std::to_string(i) + "/weight", &m.layers[i].weight);
        out.emplace_back(prefix + "/" + std::to_string(i) + "/bias", &m.layers[i].bias);
      }
    };
    add("srl/predictor", predictor);
    add("srl/dynamics", dynamics);
    add("srl/vae_mu", vae_mu);
    add("srl/vae_log_std", vae_log_std);
    add("srl/vae_decoder", vae_decoder);
    return out;
  }

  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for (auto& [n, p] : named_tensors()) out.push_back(p);
    return out;
  }
};

template <typename T>
struct SrlVars {
  MlpVars predictor;
  MlpVars dynamics;
  MlpVars vae_mu;
  MlpVars vae_log_std;
  MlpVars vae_decoder;

  std::vector<Var> all() const {
    std::vector<Var> out;
    for (const MlpVars* m : {&predictor, &dynamics, &vae_mu, &vae_log_std, &vae_decoder}) {
      for (std::size_t i = 0; i < m->weights.size(); ++i) {
        out.push_back(m->weights[i]);
        out.push_back(m->biases[i]);
      }
    }
    return out;
  }
};

template <typename T>
SrlVars<T> bind_srl(Tape<T>& t, const SrlParams<T>& p) {
  return {diff::bind_params(t, p.predictor), diff::bind_params(t, p.dynamics), diff::bind_params(t, p.vae_mu),
          diff::bind_params(t, p.vae_log_std), diff::bind_params(t, p.vae_decoder)};
}

// ---- dispatch ---------------------------------------------------------------

template <typename T>
struct SrlBatch {
  Matrix<T> states;                // privileged states s
  Matrix<T> policy_inputs;         // zero-masked copies of s
  std::vector<Matrix<T>> obs_seq;  // SPR: K+1 encoder inputs
  std::vector<Matrix<T>> act_seq;  // SPR: K actions
};

// Unweighted SRL loss for the configured method. `encoder` is the shared
// encoder selected by cfg.target; `spr_target` binds the EMA encoder.
template <typename T>
Var srl_loss(Tape<T>& t, const SrlConfig& cfg, const MlpVars& encoder, const SrlVars<T>& vars,
             const SrlBatch<T>& batch, std::span<const Index> mask, Rng& rng, const MlpVars* spr_target = nullptr) {
  const bool on_state = cfg.target == Target::kValueEncoder;
  const std::vector<AugmentOp> ops = cfg.resolved_augment();
  switch (cfg.method) {
    case Method::kNone:
      throw UsageError("srl_loss: method none has no loss; the trainer must skip it");
    case Method::kPvp:
      return pvp_loss(t, encoder, vars.predictor, batch.states, mask);
    case Method::kSimSiam: {
      const Matrix<T>& x = on_state ? batch.states : batch.policy_inputs;
      Matrix<T> v1 = augment(x, ops.at(0), rng, cfg.augment_params);
      Matrix<T> v2 = augment(x, ops.at(1), rng, cfg.augment_params);
      return simsiam_loss(t, encoder, vars.predictor, v1, v2);
    }
    case Method::kSpr: {
      if (on_state) throw ConfigError("srl.target: SPR requires state-action pairs for training");
      if (!spr_target) throw UsageError("srl_loss: SPR needs the target encoder binding");
      std::vector<Matrix<T>> obs = batch.obs_seq;
      if (!ops.empty()) {
        for (auto& o : obs) o = augment(o, ops[0], rng, cfg.augment_params);
      }
      return spr_loss(t, encoder, *spr_target, vars.dynamics, obs, batch.act_seq);
    }
    case Method::kVae: {
      const Matrix<T>& x = on_state ? batch.states : batch.policy_inputs;
      Matrix<T> noise(cfg.vae_latent, x.cols());
      for (Index j = 0; j < noise.cols(); ++j) {
        for (Index i = 0; i < noise.rows(); ++i) noise(i, j) = static_cast<T>(gaussian(rng));
      }
      return vae_loss(t, encoder, vars.vae_mu, vars.vae_log_std, vars.vae_decoder, x, noise).total;
    }
  }
  throw UsageError("srl_loss: unknown method");
}

// Per-dimension standard deviation of L2-normalized embeddings, averaged over
// dimensions. Collapsed representations drive this toward zero.
template <typename T>
double embedding_std(const Matrix<T>& z) {
  if (z.cols() < 2) return 0.0;
  Eigen::MatrixXd zn = z.template cast<double>();
  for (Index j = 0; j < zn.cols(); ++j) {
    const double n = zn.col(j).norm();
    zn.col(j) /= std::max(n, kNcsEps);
  }
  Eigen::VectorXd mean = zn.rowwise().mean();
  Eigen::MatrixXd centered = zn.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  return var.array().sqrt().mean();
}

}  // namespace srl4h::srl
