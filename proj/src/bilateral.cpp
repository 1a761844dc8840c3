#include "bilat/bilateral.hpp"

#include <cmath>

namespace bilat {

void ControllerGains::validate() const {
  if (!(kp > 0.0) || !(kd > 0.0) || !(kf > 0.0)) {
    throw std::invalid_argument("ControllerGains: kp, kd, kf must be > 0");
  }
  for (double j : nominal_inertia) {
    if (!(j > 0.0)) throw std::invalid_argument("ControllerGains: J_n must be > 0");
  }
  if (!(torque_constant > 0.0)) {
    throw std::invalid_argument("ControllerGains: torque_constant must be > 0");
  }
}

void ObserverConfig::validate() const {
  if (!(dob_cutoff > 0.0)) {
    throw std::invalid_argument("ObserverConfig: dob_cutoff must be > 0");
  }
  for (const auto& p : nominal) p.validate();
  if (!(velocity_epsilon > 0.0)) {
    throw std::invalid_argument("ObserverConfig: velocity_epsilon must be > 0");
  }
}

ObserverState ObserverState::zeros(int joints) {
  ObserverState s;
  s.lowpass.assign(joints, 0.0);
  s.disturbance.assign(joints, 0.0);
  s.external.assign(joints, 0.0);
  return s;
}

const std::vector<double>& dob_update(ObserverState& obs,
                                      std::span<const double> torque_cmd,
                                      std::span<const double> velocity,
                                      const ObserverConfig& cfg, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dob_update: dt must be > 0");
  const size_t n = obs.lowpass.size();
  if (torque_cmd.size() != n || velocity.size() != n || cfg.nominal.size() != n) {
    throw std::invalid_argument("dob_update: vector length mismatch");
  }
  require_finite(torque_cmd, "dob_update.torque_cmd");
  require_finite(velocity, "dob_update.velocity");
  const double g = cfg.dob_cutoff;
  for (size_t j = 0; j < n; ++j) {
    const double gj = g * cfg.nominal[j].inertia * velocity[j];
    obs.lowpass[j] += dt * g * (torque_cmd[j] + gj - obs.lowpass[j]);
    obs.disturbance[j] = obs.lowpass[j] - gj;
  }
  return obs.disturbance;
}

const std::vector<double>& rfob_update(ObserverState& obs,
                                       std::span<const double> angle,
                                       std::span<const double> velocity,
                                       const ObserverConfig& cfg) {
  const size_t n = obs.disturbance.size();
  if (angle.size() != n || velocity.size() != n) {
    throw std::invalid_argument("rfob_update: vector length mismatch");
  }
  for (size_t j = 0; j < n; ++j) {
    const JointParams& p = cfg.nominal[j];
    obs.external[j] = obs.disturbance[j] -
                      (p.viscous_friction * velocity[j] +
                       p.coulomb_friction * std::tanh(velocity[j] / cfg.velocity_epsilon) +
                       p.gravity_amplitude * std::cos(angle[j]));
  }
  return obs.external;
}

AccelRefs four_channel_step(const ArmState& leader, const ArmState& follower,
                            std::span<const double> tau_leader,
                            std::span<const double> tau_follower,
                            const ControllerGains& gains) {
  const size_t n = leader.angle.size();
  if (follower.angle.size() != n || tau_leader.size() != n ||
      tau_follower.size() != n || gains.nominal_inertia.size() != n) {
    throw std::invalid_argument("four_channel_step: joint count mismatch");
  }
  AccelRefs refs;
  refs.leader.resize(n);
  refs.follower.resize(n);
  for (size_t j = 0; j < n; ++j) {
    const double e_p = leader.angle[j] - follower.angle[j];
    const double e_v = leader.velocity[j] - follower.velocity[j];
    const double s_tau = tau_leader[j] + tau_follower[j];
    const double common = -gains.kf / (2.0 * gains.nominal_inertia[j]) * s_tau;
    const double differential = 0.5 * (gains.kp * e_p + gains.kd * e_v);
    refs.leader[j] = common - differential;
    refs.follower[j] = common + differential;
  }
  return refs;
}

std::vector<double> torque_command(std::span<const double> accel_ref,
                                   std::span<const double> tau_dis,
                                   const ControllerGains& gains,
                                   std::span<const JointParams> plant,
                                   std::vector<uint8_t>* saturated) {
  const size_t n = accel_ref.size();
  if (tau_dis.size() != n || gains.nominal_inertia.size() != n || plant.size() != n) {
    throw std::invalid_argument("torque_command: vector length mismatch");
  }
  require_finite(accel_ref, "torque_command.accel_ref");
  require_finite(tau_dis, "torque_command.tau_dis");
  std::vector<double> cmd(n);
  if (saturated) saturated->assign(n, 0);
  for (size_t j = 0; j < n; ++j) {
    const double raw = gains.nominal_inertia[j] * accel_ref[j] + tau_dis[j];
    cmd[j] = clamp_abs(raw, plant[j].torque_limit);
    if (saturated && cmd[j] != raw) (*saturated)[j] = 1;
  }
  return cmd;
}

BilateralPair::BilateralPair(const ControllerGains& gains,
                             const ObserverConfig& observers, int joints)
    : gains_(gains),
      obs_cfg_(observers),
      leader_obs_(ObserverState::zeros(joints)),
      follower_obs_(ObserverState::zeros(joints)),
      leader_cmd_(joints, 0.0),
      follower_cmd_(joints, 0.0) {
  gains_.validate();
  obs_cfg_.validate();
  if (static_cast<int>(gains_.nominal_inertia.size()) != joints ||
      static_cast<int>(obs_cfg_.nominal.size()) != joints) {
    throw std::invalid_argument("BilateralPair: per-joint config length mismatch");
  }
}

void BilateralPair::reset() {
  const int n = static_cast<int>(leader_cmd_.size());
  leader_obs_ = ObserverState::zeros(n);
  follower_obs_ = ObserverState::zeros(n);
  leader_cmd_.assign(n, 0.0);
  follower_cmd_.assign(n, 0.0);
}

BilateralPair::Commands BilateralPair::step(const ArmState& leader,
                                            const ArmState& follower, double dt) {
  // Estimates first (from last tick's commands), then the control law, then
  // the observer advance with this tick's commands.
  rfob_update(leader_obs_, leader.angle, leader.velocity, obs_cfg_);
  rfob_update(follower_obs_, follower.angle, follower.velocity, obs_cfg_);

  const AccelRefs refs = four_channel_step(leader, follower, leader_obs_.external,
                                           follower_obs_.external, gains_);
  Commands out;
  out.leader = torque_command(refs.leader, leader_obs_.disturbance, gains_,
                              obs_cfg_.nominal, &out.leader_saturated);
  out.follower = torque_command(refs.follower, follower_obs_.disturbance, gains_,
                                obs_cfg_.nominal, &out.follower_saturated);

  dob_update(leader_obs_, out.leader, leader.velocity, obs_cfg_, dt);
  dob_update(follower_obs_, out.follower, follower.velocity, obs_cfg_, dt);
  leader_cmd_ = out.leader;
  follower_cmd_ = out.follower;
  return out;
}

}  // namespace bilat
