#include "srl4h/envs/planar_velocity.hpp"

#include <cmath>

namespace srl4h::envs {

namespace {

constexpr int kTermLinear = 0;
constexpr int kTermAngular = 1;
constexpr int kTermSmoothness = 2;
constexpr int kTermEnergy = 3;

std::array<double, 2> rotate(double theta, double x, double y) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * x - s * y, s * x + c * y};
}

// Scalar state fields in save/load order.
constexpr int kScalarFields = 22;

}  // namespace

EnvSpec PlanarVelocityEnv::make_spec(const EnvConfig& config) {
  EnvSpec s;
  s.name = "planar_velocity";
  s.frame_dim = kFrameDim;
  s.frames = kFrames;
  s.privileged_dim = kFrameDim * kFrames + 4;
  s.action_dim = kActionDim;
  s.horizon = config.horizon > 0 ? config.horizon : 500;
  s.reward_terms = {{"lin_vel_tracking", 1.0},
                    {"ang_vel_tracking", 0.5},
                    {"action_smoothness", -2.5e-3},
                    {"energy", -1e-3}};
  return s;
}

PlanarVelocityEnv::PlanarVelocityEnv(const EnvConfig& config) : config_(config), spec_(make_spec(config)) {
  config_.validate();
  instances_.resize(static_cast<std::size_t>(config.num_envs));
  for (auto& inst : instances_) inst.frames = Eigen::VectorXd::Zero(kFrames * kFrameDim);
}

std::array<double, 3> PlanarVelocityEnv::resample_command(Rng& rng) {
  return {uniform(rng, -0.5, 1.0), uniform(rng, -0.3, 0.3), uniform(rng, -1.0, 1.0)};
}

std::array<double, 2> PlanarVelocityEnv::body_velocity(const Instance& inst) const {
  return rotate(-inst.heading, inst.vel[0], inst.vel[1]);
}

void PlanarVelocityEnv::refresh_frame(Instance& inst, bool fill_stack) {
  const double n = config_.obs_noise;
  const auto vb = body_velocity(inst);
  Eigen::VectorXd f(kFrameDim);
  f(0) = inst.yaw_rate + n * gaussian(inst.rng);
  f(1) = vb[0] + n * gaussian(inst.rng);
  f(2) = vb[1] + n * gaussian(inst.rng);
  f(3) = inst.accel_body[0] + n * gaussian(inst.rng);
  f(4) = inst.accel_body[1] + n * gaussian(inst.rng);
  f(5) = inst.command[0];
  f(6) = inst.command[1];
  f(7) = inst.command[2];
  f(8) = inst.prev_action[0];
  f(9) = inst.prev_action[1];
  f(10) = inst.prev_action[2];
  if (fill_stack) {
    for (Index k = 0; k < kFrames; ++k) inst.frames.segment(k * kFrameDim, kFrameDim) = f;
  } else {
    for (Index k = kFrames - 1; k > 0; --k) {
      inst.frames.segment(k * kFrameDim, kFrameDim) = inst.frames.segment((k - 1) * kFrameDim, kFrameDim);
    }
    inst.frames.head(kFrameDim) = f;
  }
}

void PlanarVelocityEnv::reset_instance(Instance& inst) {
  inst.pos = {0.0, 0.0};
  inst.vel = {0.0, 0.0};
  inst.heading = 0.0;
  inst.yaw_rate = 0.0;
  inst.mass = uniform(inst.rng, config_.mass_min, config_.mass_max);
  inst.drag = uniform(inst.rng, config_.drag_min, config_.drag_max);
  inst.yaw_drag = uniform(inst.rng, config_.drag_min, config_.drag_max);
  inst.command = resample_command(inst.rng);
  inst.prev_action = {0.0, 0.0, 0.0};
  inst.prev_action2 = {0.0, 0.0, 0.0};
  inst.accel_body = {0.0, 0.0};
  inst.step = 0;
  refresh_frame(inst, true);
}

StepBatch PlanarVelocityEnv::reset(std::uint64_t seed) {
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    instances_[i].rng.seed(mix_seed(seed ^ static_cast<std::uint64_t>(i)));
    reset_instance(instances_[i]);
  }
  return observe();
}

void PlanarVelocityEnv::write_columns(const Instance& inst, Index col, Matrix<float>& policy,
                                      Matrix<float>& priv) const {
  const Index np = kFrames * kFrameDim;
  for (Index r = 0; r < np; ++r) {
    const float v = static_cast<float>(inst.frames(r));
    policy(r, col) = v;
    priv(r, col) = v;
  }
  const auto vb = body_velocity(inst);
  for (Index r = np; r < spec_.privileged_dim; ++r) policy(r, col) = 0.0f;
  priv(np + 0, col) = static_cast<float>(vb[0]);
  priv(np + 1, col) = static_cast<float>(vb[1]);
  priv(np + 2, col) = static_cast<float>(inst.mass);
  priv(np + 3, col) = static_cast<float>(inst.drag);
}

StepBatch PlanarVelocityEnv::observe() const {
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

StepBatch PlanarVelocityEnv::step(const Matrix<float>& actions) {
  const Index n = num_envs();
  if (actions.rows() != kActionDim || actions.cols() != n) {
    throw ConfigError("planar_velocity: actions must be [" + std::to_string(kActionDim) + " x " +
                      std::to_string(n) + "]");
  }
  if (!actions.allFinite()) throw RuntimeFailure("planar_velocity: non-finite action");

  const double dt = config_.dt;
  const double sigma = config_.sigma;
  Eigen::MatrixXd terms(static_cast<Index>(spec_.reward_terms.size()), n);
  std::vector<std::uint8_t> done(static_cast<std::size_t>(n), 0);
  std::vector<std::uint8_t> truncated(static_cast<std::size_t>(n), 0);
  Matrix<float> terminal = Matrix<float>::Zero(spec_.privileged_dim, n);
  Matrix<float> scratch_policy(spec_.privileged_dim, 1);

  for (Index i = 0; i < n; ++i) {
    Instance& s = instances_[static_cast<std::size_t>(i)];
    std::array<double, 3> a{};
    for (int k = 0; k < 3; ++k) a[k] = std::clamp(static_cast<double>(actions(k, i)), -1.0, 1.0);

    const auto force = rotate(s.heading, kForceGain * a[0], kForceGain * a[1]);
    const std::array<double, 2> v_old = s.vel;
    s.vel[0] += dt * (force[0] / s.mass - s.drag * s.vel[0]);
    s.vel[1] += dt * (force[1] / s.mass - s.drag * s.vel[1]);
    s.yaw_rate += dt * (kForceGain * a[2] / s.mass - s.yaw_drag * s.yaw_rate);
    s.pos[0] += dt * s.vel[0];
    s.pos[1] += dt * s.vel[1];
    s.heading = wrap_angle(s.heading + dt * s.yaw_rate);
    s.accel_body = rotate(-s.heading, (s.vel[0] - v_old[0]) / dt, (s.vel[1] - v_old[1]) / dt);

    const auto vb = body_velocity(s);
    Eigen::Vector2d v_err(vb[0] - s.command[0], vb[1] - s.command[1]);
    Eigen::VectorXd at = Eigen::Map<const Eigen::Vector3d>(a.data());
    Eigen::VectorXd a1 = Eigen::Map<const Eigen::Vector3d>(s.prev_action.data());
    Eigen::VectorXd a2 = Eigen::Map<const Eigen::Vector3d>(s.prev_action2.data());
    terms(kTermLinear, i) = std::exp(-v_err.squaredNorm() / (2.0 * sigma * sigma));
    const double w_err = s.yaw_rate - s.command[2];
    terms(kTermAngular, i) = std::exp(-(w_err * w_err) / (2.0 * sigma * sigma));
    terms(kTermSmoothness, i) = action_smoothness_penalty(at, a1, a2);
    terms(kTermEnergy, i) = at.squaredNorm();

    s.prev_action2 = s.prev_action;
    s.prev_action = a;
    s.step += 1;
    if (s.step == kResampleStep) s.command = resample_command(s.rng);

    const double speed = std::hypot(s.vel[0], s.vel[1]);
    const bool blown = !std::isfinite(speed) || !std::isfinite(s.yaw_rate) || speed > kBlowUpSpeed;
    const bool timeout = s.step >= spec_.horizon;
    refresh_frame(s, false);
    if (blown || timeout) {
      done[static_cast<std::size_t>(i)] = 1;
      truncated[static_cast<std::size_t>(i)] = (!blown && timeout) ? 1 : 0;
      Matrix<float> term_col(spec_.privileged_dim, 1);
      write_columns(s, 0, scratch_policy, term_col);
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

void PlanarVelocityEnv::set_step_count(Index instance, int step) {
  instances_.at(static_cast<std::size_t>(instance)).step = step;
}

void PlanarVelocityEnv::save_state(diff::ArrayArchive& archive, const std::string& prefix) const {
  std::vector<double> scalars;
  std::vector<double> frames;
  std::string rngs;
  for (const auto& s : instances_) {
    const double row[kScalarFields] = {s.pos[0], s.pos[1], s.vel[0], s.vel[1], s.heading, s.yaw_rate,
                                       s.mass, s.drag, s.yaw_drag, s.command[0], s.command[1], s.command[2],
                                       s.prev_action[0], s.prev_action[1], s.prev_action[2], s.prev_action2[0],
                                       s.prev_action2[1], s.prev_action2[2], s.accel_body[0], s.accel_body[1],
                                       static_cast<double>(s.step), 0.0};
    scalars.insert(scalars.end(), row, row + kScalarFields);
    frames.insert(frames.end(), s.frames.data(), s.frames.data() + s.frames.size());
    rngs += rng_state(s.rng);
    rngs += '\n';
  }
  archive.put_f64(prefix + "scalars", scalars);
  archive.put_f64(prefix + "frames", frames);
  archive.put_string(prefix + "rng", rngs);
}

void PlanarVelocityEnv::load_state(const diff::ArrayArchive& archive, const std::string& prefix) {
  const auto scalars = archive.get_f64(prefix + "scalars");
  const auto frames = archive.get_f64(prefix + "frames");
  const auto rngs = archive.get_string(prefix + "rng");
  const std::size_t n = instances_.size();
  if (scalars.size() != n * kScalarFields || frames.size() != n * static_cast<std::size_t>(kFrames * kFrameDim)) {
    throw ConfigError("planar_velocity: saved state does not match " + std::to_string(n) + " instances");
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = instances_[i];
    const double* r = &scalars[i * kScalarFields];
    s.pos = {r[0], r[1]};
    s.vel = {r[2], r[3]};
    s.heading = r[4];
    s.yaw_rate = r[5];
    s.mass = r[6];
    s.drag = r[7];
    s.yaw_drag = r[8];
    s.command = {r[9], r[10], r[11]};
    s.prev_action = {r[12], r[13], r[14]};
    s.prev_action2 = {r[15], r[16], r[17]};
    s.accel_body = {r[18], r[19]};
    s.step = static_cast<int>(r[20]);
    s.frames = Eigen::Map<const Eigen::VectorXd>(&frames[i * kFrames * kFrameDim], kFrames * kFrameDim);
    const auto end = rngs.find('\n', pos);
    if (end == std::string::npos) throw ConfigError("planar_velocity: truncated rng state");
    set_rng_state(s.rng, rngs.substr(pos, end - pos));
    pos = end + 1;
  }
}

}  // namespace srl4h::envs
