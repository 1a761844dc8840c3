#pragma once

#include <string>
#include <vector>

#include "bilat/bilateral.hpp"
#include "bilat/episode.hpp"
#include "bilat/sim.hpp"

namespace bilat {

// Operator hand: a PD coupling that drags the leader along the expert script.
// Applied to the leader plant as external torque, so the leader's RFOB sees
// the hand exactly like the follower's sees the environment.
struct HandModel {
  double stiffness = 50.0;  // N m/rad
  double damping = 3.0;     // N m s/rad
};

// Everything needed to stand up one leader/follower rig for a task.
struct SessionConfig {
  TaskKind task = TaskKind::cup;
  int joint_count = 5;
  int follower_arms = 1;
  std::vector<JointParams> plant;  // per joint, shared by all arms
  ControllerGains gains;
  ObserverConfig observers;
  HandModel hand;
  TaskGeometry geometry;
  CameraConfig cameras;
  ContactObject grip_object;
  SpongeCoupling coupling;
  int control_rate = 1000;
  int image_rate = 100;

  double dt() const { return 1.0 / control_rate; }
  void validate() const;
};

// Ordered motion phases for the leader arms plus force-triggered grip phases.
// Arm-joint waypoints are tracked with minimum-jerk interpolation; grippers
// close at a fixed rate until the follower's estimated grip torque reaches
// torque_target, then hold.
struct ExpertScript {
  struct Waypoint {
    double time = 0.0;
    std::vector<double> pose;  // (joint_count-1) * follower_arms, concatenated
  };
  struct Grip {
    double close_start = 0.0;
    double close_rate = 0.3;     // rad/s
    double torque_target = 0.05; // N m, follower RFOB threshold
    double open_start = -1.0;    // <0: never reopens
    double open_rate = 0.6;      // rad/s
  };

  std::vector<Waypoint> waypoints;
  std::vector<Grip> grippers;  // one per arm
  // per-episode jitter drawn from the session seed
  double pose_jitter = 0.01;        // rad
  double torque_jitter_frac = 0.08;
  double time_jitter = 0.05;        // s

  void validate(const SessionConfig& cfg) const;
};

// Stateful evaluation of an ExpertScript (grip triggers latch).
class ScriptRunner {
 public:
  ScriptRunner(const ExpertScript& script, const SessionConfig& cfg, uint64_t seed);

  // Full-arm target pose/velocity for every leader arm at time t, given the
  // follower grip torque estimates (positive magnitudes) of the current tick.
  void targets(double t, std::span<const double> follower_grip,
               std::vector<double>& pose, std::vector<double>& velocity);

  double grip_target(int arm) const { return script_.grippers[arm].torque_target; }

 private:
  ExpertScript script_;
  int joints_;
  int arms_;
  double open_angle_;
  std::vector<bool> triggered_;
  std::vector<double> hold_angle_;
};

struct SessionResult {
  Episode episode;
  SceneLog log;
  // per-tick controller telemetry (captured when requested)
  std::vector<std::vector<double>> commands_follower;
  std::vector<std::vector<double>> commands_leader;
};

// Runs the leader under the scripted expert and the follower under 4ch
// bilateral control; records both arms' (angle, velocity, tau_ext) at the
// control rate and frames at the image rate. Deterministic given the seed.
SessionResult record_session(const SessionConfig& cfg, const ExpertScript& script,
                             const std::string& instruction_raw,
                             const std::string& instruction_normalized,
                             double duration, uint64_t seed,
                             bool capture_telemetry = false);

}  // namespace bilat
