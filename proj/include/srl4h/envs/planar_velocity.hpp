#pragma once

#include <array>

#include "srl4h/envs/config.hpp"
#include "srl4h/rng.hpp"

namespace srl4h::envs {

// Planar rigid body tracking a body-frame velocity command.
//
// Proprioceptive frame (11): gyro yaw rate, odometry body velocity (2),
// accelerometer (2), command (vx, vy, yaw rate), previous action (3).
// Noise of std obs_noise is added to the gyro, odometry and accelerometer
// channels. The policy input stacks 5 frames, newest first (55 values), and
// is followed by four privileged slots: true body-frame velocity (2), mass,
// linear drag.
//
// Dynamics (semi-implicit Euler, world frame):
//   v'     = v + dt (R(theta) 5 a_xy / m - c v)
//   omega' = omega + dt (5 a_yaw / m - c_yaw omega)
//   p'     = p + dt v',  theta' = wrap(theta + dt omega')
class PlanarVelocityEnv final : public VecEnv {
 public:
  static constexpr Index kFrameDim = 11;
  static constexpr Index kFrames = 5;
  static constexpr Index kActionDim = 3;
  static constexpr double kForceGain = 5.0;
  static constexpr int kResampleStep = 250;
  static constexpr double kBlowUpSpeed = 10.0;

  struct Instance {
    std::array<double, 2> pos{};
    std::array<double, 2> vel{};  // world frame
    double heading = 0.0;
    double yaw_rate = 0.0;
    double mass = 1.0;
    double drag = 0.1;
    double yaw_drag = 0.1;
    std::array<double, 3> command{};
    std::array<double, 3> prev_action{};
    std::array<double, 3> prev_action2{};
    std::array<double, 2> accel_body{};  // last true body-frame acceleration
    int step = 0;
    Eigen::VectorXd frames;  // kFrames * kFrameDim, newest first
    Rng rng;
  };

  explicit PlanarVelocityEnv(const EnvConfig& config);

  static EnvSpec make_spec(const EnvConfig& config);

  const EnvSpec& spec() const override { return spec_; }
  Index num_envs() const override { return static_cast<Index>(instances_.size()); }
  StepBatch reset(std::uint64_t seed) override;
  StepBatch step(const Matrix<float>& actions) override;
  StepBatch observe() const override;
  void save_state(diff::ArrayArchive& archive, const std::string& prefix) const override;
  void load_state(const diff::ArrayArchive& archive, const std::string& prefix) override;
  void set_step_count(Index instance, int step) override;

  // Uniform command draw: vx in (-0.5, 1.0), vy in (-0.3, 0.3), yaw in (-1, 1).
  static std::array<double, 3> resample_command(Rng& rng);

  const Instance& instance(Index i) const { return instances_.at(static_cast<std::size_t>(i)); }
  Instance& mutable_instance(Index i) { return instances_.at(static_cast<std::size_t>(i)); }

  // Recomputes the current frame into the newest stack slot (noise drawn from the instance rng).
  void refresh_frame(Instance& inst, bool fill_stack);
  std::array<double, 2> body_velocity(const Instance& inst) const;

 private:
  void reset_instance(Instance& inst);
  void write_columns(const Instance& inst, Index col, Matrix<float>& policy, Matrix<float>& priv) const;

  EnvConfig config_;
  EnvSpec spec_;
  std::vector<Instance> instances_;
};

}  // namespace srl4h::envs
