#pragma once

#include <array>
#include <filesystem>

#include "srl4h/envs/config.hpp"
#include "srl4h/rng.hpp"

namespace srl4h::envs {

inline constexpr int kChainJoints = 4;
inline constexpr double kChainLinkLength = 0.25;

// Reference joint trajectories, one sum of two sines per clip and joint:
//   q_ref(t) = A1 sin(2 pi f1 t dt + phi1) + A2 sin(2 pi f2 t dt + phi2)
// with A in [0.1, 0.6] rad, f in [0.2, 0.7] Hz, phi in [0, 2 pi).
struct ReferenceLibrary {
  int num_clips = 0;
  int clip_length = 0;
  double dt = 0.02;
  std::uint64_t seed = 0;
  // [clip][joint] -> {A1, f1, phi1, A2, f2, phi2}
  std::vector<std::array<std::array<double, 6>, kChainJoints>> params;
  // positions[clip] is [kChainJoints x clip_length]
  std::vector<Eigen::MatrixXd> positions;
  // base-to-end-effector distance of the reference pose, [clip][frame]
  std::vector<Eigen::VectorXd> ee_distance;

  Eigen::Vector4d frame(int clip, int t) const { return positions.at(static_cast<std::size_t>(clip)).col(t); }

  diff::ArrayArchive to_archive() const;
  static ReferenceLibrary from_archive(const diff::ArrayArchive& archive);
  void save(const std::filesystem::path& path) const { to_archive().save(path); }
  static ReferenceLibrary load(const std::filesystem::path& path) {
    return from_archive(diff::ArrayArchive::load(path));
  }
};

ReferenceLibrary generate_reference_library(std::uint64_t seed, int num_clips, int clip_length, double dt = 0.02);

// Planar forward kinematics of the 4-link chain (link length 0.25 m).
Eigen::Vector2d chain_end_effector(const Eigen::Vector4d& q);
Eigen::Vector2d chain_end_effector_velocity(const Eigen::Vector4d& q, const Eigen::Vector4d& qd);

// Four decoupled damped double integrators imitating reference clips.
//
//   qd' = qd + dt (2 a - 0.5 qd + d) / m_i,   q' = q + dt qd'
// with an Ornstein-Uhlenbeck disturbance d that only the privileged state sees.
//
// Proprioceptive frame (17): q (4), noisy qd (4), previous action (4), next
// reference pose (4), clip phase in [0, 1). Privileged tail: joint inertias
// (4), disturbance (4), end-effector world velocity (2).
class ChainMimicEnv final : public VecEnv {
 public:
  static constexpr Index kFrameDim = 17;
  static constexpr Index kActionDim = kChainJoints;
  static constexpr double kJointLimit = 3.14159265358979323846;
  static constexpr double kBlowUpJointSpeed = 50.0;

  struct Instance {
    Eigen::Vector4d q = Eigen::Vector4d::Zero();
    Eigen::Vector4d qd = Eigen::Vector4d::Zero();
    Eigen::Vector4d inertia = Eigen::Vector4d::Ones();
    Eigen::Vector4d disturbance = Eigen::Vector4d::Zero();
    Eigen::Vector4d prev_action = Eigen::Vector4d::Zero();
    Eigen::Vector4d qd_noise = Eigen::Vector4d::Zero();
    int clip = 0;
    int step = 0;  // also the phase index into the clip
    Rng rng;
  };

  ChainMimicEnv(const EnvConfig& config, ReferenceLibrary library);
  explicit ChainMimicEnv(const EnvConfig& config);

  static EnvSpec make_spec(const EnvConfig& config);

  const EnvSpec& spec() const override { return spec_; }
  Index num_envs() const override { return static_cast<Index>(instances_.size()); }
  StepBatch reset(std::uint64_t seed) override;
  StepBatch step(const Matrix<float>& actions) override;
  StepBatch observe() const override;
  void save_state(diff::ArrayArchive& archive, const std::string& prefix) const override;
  void load_state(const diff::ArrayArchive& archive, const std::string& prefix) override;
  void set_step_count(Index instance, int step) override;

  const ReferenceLibrary& library() const { return library_; }
  const Instance& instance(Index i) const { return instances_.at(static_cast<std::size_t>(i)); }
  Instance& mutable_instance(Index i) { return instances_.at(static_cast<std::size_t>(i)); }

  // Unweighted reward terms of an instance's current state against the reference at its phase.
  Eigen::VectorXd evaluate_terms(const Instance& inst, const Eigen::Vector4d& action,
                                 const Eigen::Vector4d& prev_action, double limit_excess) const;

 private:
  void reset_instance(Instance& inst);
  void write_columns(const Instance& inst, Index col, Matrix<float>& policy, Matrix<float>& priv) const;
  int reference_index(int step) const;

  EnvConfig config_;
  EnvSpec spec_;
  ReferenceLibrary library_;
  std::vector<Instance> instances_;
};

}  // namespace srl4h::envs
