#pragma once

#include <span>
#include <vector>

#include "bilat/sim.hpp"

namespace bilat {

// Acceleration-control gains for the 4-channel bilateral law. The torque sign
// convention throughout is the one fixed by the observers: estimates are
// positive for torques the motor has to work against.
struct ControllerGains {
  double kp = 400.0;  // 1/s^2
  double kd = 40.0;   // 1/s, critical damping at kd = 2*sqrt(kp)
  double kf = 1.0;    // force-loop gain
  std::vector<double> nominal_inertia;  // J_n per joint (kg m^2)
  // per-joint torque constant; commands are reported as currents through it
  double torque_constant = 1.0;

  void validate() const;
};

struct ObserverConfig {
  double dob_cutoff = 100.0;  // g (rad/s)
  std::vector<JointParams> nominal;
  double velocity_epsilon = kVelocityEpsilon;

  void validate() const;
};

// Per-joint observer memory; reset to zeros at episode start.
struct ObserverState {
  std::vector<double> lowpass;      // DOB accumulator q (N m)
  std::vector<double> disturbance;  // last tau_dis estimate
  std::vector<double> external;     // last tau_ext estimate

  static ObserverState zeros(int joints);
};

// Velocity-form disturbance observer:
//   q += dt*g*(tau_cmd + g*J_n*dth - q);  tau_dis = q - g*J_n*dth
// Returns the updated estimates (also stored in obs.disturbance).
const std::vector<double>& dob_update(ObserverState& obs,
                                      std::span<const double> torque_cmd,
                                      std::span<const double> velocity,
                                      const ObserverConfig& cfg, double dt);

// Reaction force observer: subtract the nominal friction/gravity model from
// the DOB estimate. Uses obs.disturbance from the last dob_update.
const std::vector<double>& rfob_update(ObserverState& obs,
                                       std::span<const double> angle,
                                       std::span<const double> velocity,
                                       const ObserverConfig& cfg);

struct AccelRefs {
  std::vector<double> leader;
  std::vector<double> follower;
};

// Common/differential acceleration control realizing the bilateral goals
// theta_l - theta_f = 0 and tau_l + tau_f = 0. The force loop uses
// -Kf/(2 J_n) * (tau_l + tau_f): with reaction-convention estimates the
// common mode then follows the operator and yields to contact (the opposite
// sign feeds contact back into itself).
AccelRefs four_channel_step(const ArmState& leader, const ArmState& follower,
                            std::span<const double> tau_leader,
                            std::span<const double> tau_follower,
                            const ControllerGains& gains);

// tau_cmd = J_n * accel_ref + tau_dis, clamped to the joint torque limit.
// Saturated joints are flagged when a flag vector is supplied.
std::vector<double> torque_command(std::span<const double> accel_ref,
                                   std::span<const double> tau_dis,
                                   const ControllerGains& gains,
                                   std::span<const JointParams> plant,
                                   std::vector<uint8_t>* saturated = nullptr);

// One leader/follower pair serviced by a single sequential loop per tick.
// Owns both observers; step() produces the motor commands for the current
// states and advances the observers.
class BilateralPair {
 public:
  BilateralPair(const ControllerGains& gains, const ObserverConfig& observers,
                int joints);

  struct Commands {
    std::vector<double> leader;
    std::vector<double> follower;
    std::vector<uint8_t> leader_saturated;
    std::vector<uint8_t> follower_saturated;
  };

  Commands step(const ArmState& leader, const ArmState& follower, double dt);

  const std::vector<double>& leader_external() const { return leader_obs_.external; }
  const std::vector<double>& follower_external() const { return follower_obs_.external; }
  const ObserverState& leader_observer() const { return leader_obs_; }
  const ObserverState& follower_observer() const { return follower_obs_; }
  const ControllerGains& gains() const { return gains_; }
  const ObserverConfig& observers() const { return obs_cfg_; }
  void reset();

 private:
  ControllerGains gains_;
  ObserverConfig obs_cfg_;
  ObserverState leader_obs_;
  ObserverState follower_obs_;
  std::vector<double> leader_cmd_;
  std::vector<double> follower_cmd_;
};

}  // namespace bilat
