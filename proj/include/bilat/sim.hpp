#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bilat/common.hpp"

namespace bilat {

// Smoothing width for the tanh Coulomb-friction model (rad/s). Shared by the
// plant and the observers so a nominal-equals-true configuration cancels
// exactly.
constexpr double kVelocityEpsilon = 1e-3;

struct JointParams {
  double inertia = 0.05;            // J (kg m^2)
  double viscous_friction = 0.05;   // D (N m s/rad)
  double coulomb_friction = 0.01;   // tau_c (N m)
  double gravity_amplitude = 0.0;   // G (N m)
  double torque_limit = 5.0;        // N m

  void validate() const;
};

// Per-joint snapshot of one simulated arm (leader or follower).
struct ArmState {
  std::vector<double> angle;            // theta (rad)
  std::vector<double> velocity;         // dtheta (rad/s)
  std::vector<double> external_torque;  // tau_ext (N m), as applied to the plant

  int joints() const { return static_cast<int>(angle.size()); }
  static ArmState zeros(int n);
  void validate() const;
};

// Semi-implicit Euler on J*ddth = tau_motor + tau_ext - D*dth
//                                 - tau_c*tanh(dth/eps_v) - G*cos(th).
// Motor torques are clamped to each joint's torque_limit; velocity updates
// before angle. Throws std::invalid_argument on non-finite input.
ArmState step_dynamics(const ArmState& state, std::span<const JointParams> params,
                       std::span<const double> motor_torque,
                       std::span<const double> external_torque, double dt);

// Deformable object squeezed by the gripper joint. Torque is zero until the
// gripper passes engage_angle, then a spring-damper that only ever resists
// closing. Crossing crush_deformation latches `crushed` for the episode.
struct ContactObject {
  double engage_angle = 2.40;        // theta_c (rad)
  double stiffness = 2.0;            // k (N m/rad)
  double quadratic_stiffness = 8.0;  // k2 (N m/rad^2)
  double damping = 0.05;             // c (N m s/rad)
  double crush_deformation = 0.45;   // x_crush (rad)
  bool crushed = false;

  void validate() const;
  // Grip torque the object can sustain just before crushing.
  double crush_torque() const;
};

// Returns tau_ext on the gripper joint, <= 0 in the closing convention.
double contact_torque(ContactObject& object, double gripper_angle,
                      double gripper_velocity);

// Torsional coupling between the two wrist joints holding the sponge.
// Transmits spring torque up to mu * min(|grip_left|, |grip_right|); beyond
// that it slips (latched for the episode).
struct SpongeCoupling {
  double torsional_stiffness = 0.6;  // k_t (N m/rad)
  double rest_twist = 0.0;           // rad
  double slip_coefficient = 2.2;     // mu
  bool slipped = false;
  ContactObject left_grip;
  ContactObject right_grip;

  void validate() const;
};

struct SpongeTorques {
  double wrist_left = 0.0;
  double wrist_right = 0.0;
  bool engaged = false;  // false => torques are zero and the tick is flagged
};

SpongeTorques sponge_coupling_torques(SpongeCoupling& coupling,
                                      double left_wrist_angle,
                                      double right_wrist_angle,
                                      double grip_left, double grip_right,
                                      bool left_engaged, bool right_engaged);

enum class ObjectLocation { source, in_gripper, stacked, table };

const char* to_string(ObjectLocation loc);

struct SceneObject {
  std::string id;
  ObjectLocation location = ObjectLocation::source;
  bool crushed = false;
};

struct SceneEvent {
  double time = 0.0;
  std::string name;
};

// Stage events and latched flags accumulated over one episode.
struct SceneLog {
  std::vector<SceneEvent> events;
  bool crushed = false;
  bool slipped = false;
  double grasp_time = -1.0;    // first in_gripper / grab
  double release_time = -1.0;  // first release after grasp

  bool has(const std::string& name) const;
  double time_of(const std::string& name) const;  // -1 when absent
};

struct CameraFrame {
  int camera_id = 0;
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // RGB8 row-major, 3*width*height bytes
  double timestamp = 0.0;
};

// Joint-space waypoints and tolerances that define the event-driven task
// logic. Arm poses cover the non-gripper joints.
struct TaskGeometry {
  std::vector<double> home_pose;
  std::vector<double> grasp_pose;
  std::vector<double> apex_pose;   // cup: carry target; sponge: lift target
  std::vector<double> place_pose;  // cup only
  double pose_tolerance = 0.08;        // rad, L-inf over arm joints
  double hold_torque_threshold = 0.01; // N m on the gripper
  double gripper_open_angle = 2.0;     // rad
  double twist_goal = 0.12;            // rad, sponge Twist stage
  // scene positions for rendering, normalized [-1, 1]
  double source_x = 0.45;
  double stack_x = -0.45;
  double drop_x = 0.1;
};

struct SceneState {
  std::vector<ArmState> arms;  // follower arm(s)
  std::vector<SceneObject> objects;
  bool grasped = false;  // cup: object held; sponge: both grips holding
  double time = 0.0;
};

enum class TaskKind { cup, sponge };

TaskKind task_kind_from_string(const std::string& s);
const char* to_string(TaskKind k);

// Event-driven transition of task objects for the current tick. grip_torques
// are positive grip magnitudes per follower arm. Appends events to the log.
void update_task_objects(SceneState& scene, std::span<const double> grip_torques,
                         TaskKind task, const TaskGeometry& geom, SceneLog& log);

struct CameraConfig {
  int count = 3;  // 3 unimanual, 4 bimanual
  int width = 64;
  int height = 48;
};

// Deterministic rasterization of table, objects, and a 2-link arm polyline
// from planar forward kinematics of joints 2-3. Identical scenes yield
// bit-identical frames. Throws std::invalid_argument on unknown camera_id.
CameraFrame render_camera(const SceneState& scene, int camera_id,
                          const CameraConfig& cameras, const TaskGeometry& geom);

// Scene + contact state for one task instance: owns the follower-side contact
// objects and the event log, and computes per-tick external torques.
class TaskWorld {
 public:
  TaskWorld(TaskKind task, const TaskGeometry& geom, const CameraConfig& cameras,
            const ContactObject& grip_object, const SpongeCoupling& coupling,
            int follower_arms, int joints);

  // External torques applied to each follower arm for the current states.
  // Also refreshes the engagement bookkeeping used by update().
  std::vector<std::vector<double>> external_torques(
      const std::vector<ArmState>& followers);

  // Event-driven object/stage transitions; call once per tick after the
  // dynamics step.
  void update(const std::vector<ArmState>& followers, double time);

  CameraFrame render(int camera_id, double time) const;

  // Positive grip magnitude per arm from the last external_torques() call.
  const std::vector<double>& grip_torques() const { return grip_torques_; }
  double sponge_twist() const;

  const SceneState& scene() const { return scene_; }
  const SceneLog& log() const { return log_; }
  const TaskGeometry& geometry() const { return geom_; }
  TaskKind task() const { return task_; }
  const CameraConfig& cameras() const { return cameras_; }
  bool crushed() const;
  bool slipped() const { return coupling_.slipped; }

 private:
  TaskKind task_;
  TaskGeometry geom_;
  CameraConfig cameras_;
  std::vector<ContactObject> grips_;  // one per follower arm
  SpongeCoupling coupling_;
  SceneState scene_;
  SceneLog log_;
  std::vector<double> grip_torques_;
  std::vector<bool> engaged_;
  bool lift_reached_ = false;
  bool apex_reached_ = false;
  bool twist_reached_ = false;
};

}  // namespace bilat
