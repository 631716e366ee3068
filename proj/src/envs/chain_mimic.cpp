#include "srl4h/envs/chain_mimic.hpp"

#include <cmath>
#include <numbers>

namespace srl4h::envs {

namespace {

constexpr int kTermPosition = 0;
constexpr int kTermDistance = 1;
constexpr int kTermActionRate = 2;
constexpr int kTermJointVelocity = 3;
constexpr int kTermLimits = 4;

constexpr double kOuTimeConstant = 0.5;
constexpr double kOuScale = 0.1;
constexpr double kOuClamp = 0.5;

constexpr int kScalarFields = 4 * 6 + 2;

}  // namespace

ReferenceLibrary generate_reference_library(std::uint64_t seed, int num_clips, int clip_length, double dt) {
  if (num_clips < 1) throw ConfigError("reference library: num_clips must be >= 1");
  if (clip_length < 2) throw ConfigError("reference library: clip_length must be >= 2");
  ReferenceLibrary lib;
  lib.num_clips = num_clips;
  lib.clip_length = clip_length;
  lib.dt = dt;
  lib.seed = seed;
  Rng rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int c = 0; c < num_clips; ++c) {
    std::array<std::array<double, 6>, kChainJoints> p{};
    for (auto& j : p) {
      j[0] = uniform(rng, 0.1, 0.6);
      j[1] = uniform(rng, 0.2, 0.7);
      j[2] = uniform(rng, 0.0, two_pi);
      j[3] = uniform(rng, 0.1, 0.6);
      j[4] = uniform(rng, 0.2, 0.7);
      j[5] = uniform(rng, 0.0, two_pi);
    }
    Eigen::MatrixXd q(kChainJoints, clip_length);
    Eigen::VectorXd d(clip_length);
    for (int t = 0; t < clip_length; ++t) {
      const double time = t * dt;
      for (int j = 0; j < kChainJoints; ++j) {
        const auto& a = p[static_cast<std::size_t>(j)];
        q(j, t) = a[0] * std::sin(two_pi * a[1] * time + a[2]) + a[3] * std::sin(two_pi * a[4] * time + a[5]);
      }
      d(t) = chain_end_effector(q.col(t)).norm();
    }
    lib.params.push_back(p);
    lib.positions.push_back(std::move(q));
    lib.ee_distance.push_back(std::move(d));
  }
  return lib;
}

diff::ArrayArchive ReferenceLibrary::to_archive() const {
  diff::ArrayArchive a;
  a.put_u64("reference/meta", {seed, static_cast<std::uint64_t>(num_clips), static_cast<std::uint64_t>(clip_length)});
  a.put_f64("reference/dt", {dt});
  std::vector<double> p;
  std::vector<double> q;
  std::vector<double> d;
  for (int c = 0; c < num_clips; ++c) {
    for (const auto& j : params[static_cast<std::size_t>(c)]) p.insert(p.end(), j.begin(), j.end());
    const auto& pos = positions[static_cast<std::size_t>(c)];
    for (int t = 0; t < clip_length; ++t) {
      for (int j = 0; j < kChainJoints; ++j) q.push_back(pos(j, t));
    }
    const auto& dist = ee_distance[static_cast<std::size_t>(c)];
    d.insert(d.end(), dist.data(), dist.data() + dist.size());
  }
  // Stored as f32 with explicit [clip, frame, joint] shapes for inspection.
  auto put_f32 = [&a](const std::string& name, const std::vector<double>& values, std::vector<std::uint64_t> shape) {
    diff::ArrayEntry e{name, diff::DType::kF32, std::move(shape), {}};
    for (double v : values) {
      const float f = static_cast<float>(v);
      const auto* raw = reinterpret_cast<const std::uint8_t*>(&f);
      e.bytes.insert(e.bytes.end(), raw, raw + sizeof(float));
    }
    a.put_raw(std::move(e));
  };
  const auto m = static_cast<std::uint64_t>(num_clips);
  const auto l = static_cast<std::uint64_t>(clip_length);
  put_f32("reference/q", q, {m, l, kChainJoints});
  put_f32("reference/ee_distance", d, {m, l});
  a.put_f64("reference/params", p);
  return a;
}

ReferenceLibrary ReferenceLibrary::from_archive(const diff::ArrayArchive& archive) {
  const auto meta = archive.get_u64("reference/meta");
  if (meta.size() != 3) throw ConfigError("reference library: malformed meta array");
  const auto dt = archive.get_f64("reference/dt");
  const auto params = archive.get_f64("reference/params");
  const int m = static_cast<int>(meta[1]);
  const int l = static_cast<int>(meta[2]);
  if (params.size() != static_cast<std::size_t>(m) * kChainJoints * 6) {
    throw ConfigError("reference library: params array does not match clip count");
  }
  // Positions are regenerated from the stored parameters in double precision;
  // the f32 arrays exist for inspection.
  ReferenceLibrary lib = generate_reference_library(meta[0], m, l, dt.at(0));
  for (int c = 0; c < m; ++c) {
    for (int j = 0; j < kChainJoints; ++j) {
      for (int k = 0; k < 6; ++k) {
        if (lib.params[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] !=
            params[(static_cast<std::size_t>(c) * kChainJoints + j) * 6 + k]) {
          throw ConfigError("reference library: stored parameters do not match seed " + std::to_string(meta[0]));
        }
      }
    }
  }
  return lib;
}

Eigen::Vector2d chain_end_effector(const Eigen::Vector4d& q) {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double angle = 0.0;
  for (int j = 0; j < kChainJoints; ++j) {
    angle += q(j);
    p += kChainLinkLength * Eigen::Vector2d(std::cos(angle), std::sin(angle));
  }
  return p;
}

Eigen::Vector2d chain_end_effector_velocity(const Eigen::Vector4d& q, const Eigen::Vector4d& qd) {
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  double angle = 0.0;
  double rate = 0.0;
  for (int j = 0; j < kChainJoints; ++j) {
    angle += q(j);
    rate += qd(j);
    v += kChainLinkLength * rate * Eigen::Vector2d(-std::sin(angle), std::cos(angle));
  }
  return v;
}

EnvSpec ChainMimicEnv::make_spec(const EnvConfig& config) {
  EnvSpec s;
  s.name = "chain_mimic";
  s.frame_dim = kFrameDim;
  s.frames = 1;
  s.privileged_dim = kFrameDim + 4 + 4 + 2;
  s.action_dim = kActionDim;
  s.horizon = config.horizon > 0 ? config.horizon : 300;
  s.reward_terms = {{"position_tracking", 2.0},
                    {"ee_distance_tracking", 0.5},
                    {"action_rate", -1e-3},
                    {"joint_velocity", -5e-4},
                    {"joint_limits", -1.0}};
  return s;
}

ChainMimicEnv::ChainMimicEnv(const EnvConfig& config, ReferenceLibrary library)
    : config_(config), spec_(make_spec(config)), library_(std::move(library)) {
  config_.validate();
  if (library_.num_clips < 1 || library_.clip_length < 2) throw ConfigError("chain_mimic: empty reference library");
  instances_.resize(static_cast<std::size_t>(config.num_envs));
}

ChainMimicEnv::ChainMimicEnv(const EnvConfig& config)
    : ChainMimicEnv(config, generate_reference_library(config.reference_seed, config.num_clips, config.clip_length,
                                                       config.dt)) {}

int ChainMimicEnv::reference_index(int step) const { return std::min(step, library_.clip_length - 1); }

void ChainMimicEnv::reset_instance(Instance& inst) {
  std::uniform_int_distribution<int> pick(0, library_.num_clips - 1);
  inst.clip = pick(inst.rng);
  for (int j = 0; j < kChainJoints; ++j) inst.inertia(j) = uniform(inst.rng, config_.mass_min, config_.mass_max);
  inst.q = library_.frame(inst.clip, 0);
  inst.qd.setZero();
  inst.disturbance.setZero();
  inst.prev_action.setZero();
  inst.step = 0;
  for (int j = 0; j < kChainJoints; ++j) inst.qd_noise(j) = config_.obs_noise * gaussian(inst.rng);
}

StepBatch ChainMimicEnv::reset(std::uint64_t seed) {
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    instances_[i].rng.seed(mix_seed(seed ^ static_cast<std::uint64_t>(i)));
    reset_instance(instances_[i]);
  }
  return observe();
}

void ChainMimicEnv::write_columns(const Instance& s, Index col, Matrix<float>& policy, Matrix<float>& priv) const {
  Eigen::VectorXd f(spec_.privileged_dim);
  f.segment<4>(0) = s.q;
  f.segment<4>(4) = s.qd + s.qd_noise;
  f.segment<4>(8) = s.prev_action;
  f.segment<4>(12) = library_.frame(s.clip, reference_index(s.step + 1));
  f(16) = static_cast<double>(s.step % library_.clip_length) / library_.clip_length;
  f.segment<4>(17) = s.inertia;
  f.segment<4>(21) = s.disturbance;
  f.segment<2>(25) = chain_end_effector_velocity(s.q, s.qd);
  for (Index r = 0; r < spec_.privileged_dim; ++r) {
    priv(r, col) = static_cast<float>(f(r));
    policy(r, col) = r < kFrameDim ? static_cast<float>(f(r)) : 0.0f;
  }
}

StepBatch ChainMimicEnv::observe() const {
  const Index n = num_envs();
  StepBatch b;
  b.policy_obs.resize(spec_.privileged_dim, n);
  b.privileged.resize(spec_.privileged_dim, n);
  b.terminal_privileged = Matrix<float>::Zero(spec_.privileged_dim, n);
  b.reward = Eigen::VectorXd::Zero(n);
  b.terms = Eigen::MatrixXd::Zero(static_cast<Index>(spec_.reward_terms.size()), n);
  b.done.assign(static_cast<std::size_t>(n), 0);
  b.truncated.assign(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) write_columns(instances_[static_cast<std::size_t>(i)], i, b.policy_obs, b.privileged);
  return b;
}

Eigen::VectorXd ChainMimicEnv::evaluate_terms(const Instance& s, const Eigen::Vector4d& action,
                                              const Eigen::Vector4d& prev_action, double limit_excess) const {
  const double sigma = config_.sigma;
  const int ref = reference_index(s.step);
  const Eigen::Vector4d q_ref = library_.frame(s.clip, ref);
  const double d = chain_end_effector(s.q).norm();
  const double d_ref = library_.ee_distance[static_cast<std::size_t>(s.clip)](ref);
  Eigen::VectorXd t(static_cast<Index>(spec_.reward_terms.size()));
  t(kTermPosition) = std::exp(-(s.q - q_ref).squaredNorm() / (2.0 * sigma * sigma));
  t(kTermDistance) = std::exp(-((d - d_ref) * (d - d_ref)) / sigma);
  t(kTermActionRate) = (action - prev_action).squaredNorm();
  t(kTermJointVelocity) = s.qd.squaredNorm();
  t(kTermLimits) = limit_excess;
  return t;
}

StepBatch ChainMimicEnv::step(const Matrix<float>& actions) {
  const Index n = num_envs();
  if (actions.rows() != kActionDim || actions.cols() != n) {
    throw ConfigError("chain_mimic: actions must be [" + std::to_string(kActionDim) + " x " + std::to_string(n) +
                      "]");
  }
  if (!actions.allFinite()) throw RuntimeFailure("chain_mimic: non-finite action");

  const double dt = config_.dt;
  const double sqrt_dt = std::sqrt(dt);
  Eigen::MatrixXd terms(static_cast<Index>(spec_.reward_terms.size()), n);
  std::vector<std::uint8_t> done(static_cast<std::size_t>(n), 0);
  std::vector<std::uint8_t> truncated(static_cast<std::size_t>(n), 0);
  Matrix<float> terminal = Matrix<float>::Zero(spec_.privileged_dim, n);
  Matrix<float> scratch(spec_.privileged_dim, 1);
  Matrix<float> term_col(spec_.privileged_dim, 1);

  for (Index i = 0; i < n; ++i) {
    Instance& s = instances_[static_cast<std::size_t>(i)];
    Eigen::Vector4d a;
    for (int j = 0; j < kChainJoints; ++j) a(j) = std::clamp(static_cast<double>(actions(j, i)), -1.0, 1.0);

    s.qd = s.qd + dt * ((2.0 * a - 0.5 * s.qd + s.disturbance).array() / s.inertia.array()).matrix();
    s.q = s.q + dt * s.qd;
    double excess = 0.0;
    for (int j = 0; j < kChainJoints; ++j) {
      const double over = std::abs(s.q(j)) - kJointLimit;
      if (over > 0.0) {
        excess += over;
        s.q(j) = std::clamp(s.q(j), -kJointLimit, kJointLimit);
        s.qd(j) = 0.0;
      }
    }
    for (int j = 0; j < kChainJoints; ++j) {
      double d = s.disturbance(j);
      d = d - dt * d / kOuTimeConstant + kOuScale * sqrt_dt * gaussian(s.rng);
      s.disturbance(j) = std::clamp(d, -kOuClamp, kOuClamp);
    }
    s.step += 1;

    terms.col(i) = evaluate_terms(s, a, s.prev_action, excess);
    s.prev_action = a;
    for (int j = 0; j < kChainJoints; ++j) s.qd_noise(j) = config_.obs_noise * gaussian(s.rng);

    const bool blown = !s.qd.allFinite() || !s.q.allFinite() || s.qd.norm() > kBlowUpJointSpeed;
    const bool timeout = s.step >= spec_.horizon;
    if (blown || timeout) {
      done[static_cast<std::size_t>(i)] = 1;
      truncated[static_cast<std::size_t>(i)] = (!blown && timeout) ? 1 : 0;
      write_columns(s, 0, scratch, term_col);
      terminal.col(i) = term_col.col(0);
      reset_instance(s);
    }
  }

  StepBatch b = observe();
  b.terms = terms;
  b.reward = Eigen::VectorXd::Zero(n);
  for (std::size_t t = 0; t < spec_.reward_terms.size(); ++t) {
    b.reward += spec_.reward_terms[t].weight * terms.row(static_cast<Index>(t)).transpose();
  }
  b.done = std::move(done);
  b.truncated = std::move(truncated);
  b.terminal_privileged = std::move(terminal);
  return b;
}

void ChainMimicEnv::set_step_count(Index instance, int step) {
  instances_.at(static_cast<std::size_t>(instance)).step = step;
}

void ChainMimicEnv::save_state(diff::ArrayArchive& archive, const std::string& prefix) const {
  std::vector<double> scalars;
  std::string rngs;
  for (const auto& s : instances_) {
    for (const Eigen::Vector4d* v : {&s.q, &s.qd, &s.inertia, &s.disturbance, &s.prev_action, &s.qd_noise}) {
      scalars.insert(scalars.end(), v->data(), v->data() + 4);
    }
    scalars.push_back(static_cast<double>(s.clip));
    scalars.push_back(static_cast<double>(s.step));
    rngs += rng_state(s.rng);
    rngs += '\n';
  }
  archive.put_f64(prefix + "scalars", scalars);
  archive.put_string(prefix + "rng", rngs);
}

void ChainMimicEnv::load_state(const diff::ArrayArchive& archive, const std::string& prefix) {
  const auto scalars = archive.get_f64(prefix + "scalars");
  const auto rngs = archive.get_string(prefix + "rng");
  const std::size_t n = instances_.size();
  if (scalars.size() != n * kScalarFields) {
    throw ConfigError("chain_mimic: saved state does not match " + std::to_string(n) + " instances");
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = instances_[i];
    const double* r = &scalars[i * kScalarFields];
    int k = 0;
    for (Eigen::Vector4d* v : {&s.q, &s.qd, &s.inertia, &s.disturbance, &s.prev_action, &s.qd_noise}) {
      *v = Eigen::Map<const Eigen::Vector4d>(r + 4 * k);
      ++k;
    }
    s.clip = static_cast<int>(r[24]);
    s.step = static_cast<int>(r[25]);
    const auto end = rngs.find('\n', pos);
    if (end == std::string::npos) throw ConfigError("chain_mimic: truncated rng state");
    set_rng_state(s.rng, rngs.substr(pos, end - pos));
    pos = end + 1;
  }
}

}  // namespace srl4h::envs
