#include "srl4h/srl/srl.hpp"

#include <algorithm>
#include <cmath>

namespace srl4h::srl {

namespace {

template <typename E>
struct NamedValue {
  const char* name;
  E value;
};

constexpr NamedValue<Method> kMethods[] = {
    {"none", Method::kNone}, {"pvp", Method::kPvp}, {"simsiam", Method::kSimSiam},
    {"spr", Method::kSpr},   {"vae", Method::kVae},
};
constexpr NamedValue<Target> kTargets[] = {
    {"policy_encoder", Target::kPolicyEncoder},
    {"value_encoder", Target::kValueEncoder},
};
constexpr NamedValue<AugmentOp> kAugments[] = {
    {"random_masking", AugmentOp::kRandomMasking},
    {"gaussian_noise", AugmentOp::kGaussianNoise},
    {"random_amplitude_scaling", AugmentOp::kRandomAmplitudeScaling},
    {"identity_mapping", AugmentOp::kIdentityMapping},
};

template <typename E, std::size_t N>
E lookup(const NamedValue<E> (&table)[N], const std::string& s, const char* key) {
  std::string allowed;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    allowed += allowed.empty() ? "" : ", ";
    allowed += e.name;
  }
  throw ConfigError(std::string(key) + ": unknown value '" + s + "' (allowed: " + allowed + ")");
}

template <typename E, std::size_t N>
std::string name_of(const NamedValue<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

}  // namespace

Method parse_method(const std::string& s) { return lookup(kMethods, s, "srl.method"); }
Target parse_target(const std::string& s) { return lookup(kTargets, s, "srl.target"); }
AugmentOp parse_augment(const std::string& s) { return lookup(kAugments, s, "srl.augment"); }
std::string to_string(Method m) { return name_of(kMethods, m); }
std::string to_string(Target t) { return name_of(kTargets, t); }
std::string to_string(AugmentOp a) { return name_of(kAugments, a); }

double default_lambda(Method m) {
  switch (m) {
    case Method::kVae:
      return 0.1;
    case Method::kNone:
      return 0.0;
    default:
      return 0.5;
  }
}

std::vector<AugmentOp> default_augment(Method m) {
  switch (m) {
    case Method::kSimSiam:
      return {AugmentOp::kRandomMasking, AugmentOp::kIdentityMapping};
    case Method::kSpr:
      return {AugmentOp::kGaussianNoise};
    default:
      return {};
  }
}

void SrlConfig::validate() const {
  if (method == Method::kSpr && target == Target::kValueEncoder) {
    throw ConfigError("srl.target: SPR requires state-action pairs for training and cannot target the value encoder");
  }
  if (lambda && !(*lambda >= 0.0 && std::isfinite(*lambda))) throw ConfigError("srl.lambda: must be finite and >= 0");
  if (spr_steps < 1) throw ConfigError("srl.spr_steps: must be >= 1");
  if (!(ema_tau > 0.0 && ema_tau < 1.0)) throw ConfigError("srl.ema_tau: must lie in (0, 1)");
  if (vae_latent < 1) throw ConfigError("srl.vae_latent: must be >= 1");
  if (predictor_hidden < 1) throw ConfigError("srl.predictor_hidden: must be >= 1");
  if (dynamics_hidden < 1) throw ConfigError("srl.dynamics_hidden: must be >= 1");
  if (decoder_hidden < 1) throw ConfigError("srl.decoder_hidden: must be >= 1");
  if (method == Method::kSimSiam && resolved_augment().size() != 2) {
    throw ConfigError("srl.augment: simsiam needs exactly two augmentation ops");
  }
  if (method == Method::kSpr && resolved_augment().size() > 1) {
    throw ConfigError("srl.augment: spr takes at most one augmentation op");
  }
  const auto& a = augment_params;
  if (!(a.mask_prob >= 0.0 && a.mask_prob <= 1.0)) throw ConfigError("srl.mask_prob: must lie in [0, 1]");
  if (!(a.noise_std >= 0.0)) throw ConfigError("srl.noise_std: must be >= 0");
  if (!(a.scale_min > 0.0 && a.scale_min <= a.scale_max)) {
    throw ConfigError("srl.scale_min/scale_max: need 0 < min <= max");
  }
}

double d_ncs(const Eigen::VectorXd& p, const Eigen::VectorXd& z) {
  if (p.size() != z.size()) throw ConfigError("d_ncs: vectors differ in length");
  const double np = std::max(p.norm(), kNcsEps);
  const double nz = std::max(z.norm(), kNcsEps);
  return -p.dot(z) / (np * nz);
}

}  // namespace srl4h::srl
