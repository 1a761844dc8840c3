#include "bilat/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace bilat {

void JointParams::validate() const {
  if (!(inertia > 0.0)) throw std::invalid_argument("JointParams: inertia must be > 0");
  if (viscous_friction < 0.0) throw std::invalid_argument("JointParams: viscous_friction must be >= 0");
  if (coulomb_friction < 0.0) throw std::invalid_argument("JointParams: coulomb_friction must be >= 0");
  if (!(torque_limit > 0.0)) throw std::invalid_argument("JointParams: torque_limit must be > 0");
}

ArmState ArmState::zeros(int n) {
  ArmState s;
  s.angle.assign(n, 0.0);
  s.velocity.assign(n, 0.0);
  s.external_torque.assign(n, 0.0);
  return s;
}

void ArmState::validate() const {
  if (angle.size() != velocity.size() || angle.size() != external_torque.size()) {
    throw std::invalid_argument("ArmState: vector lengths differ");
  }
  require_finite(angle, "ArmState.angle");
  require_finite(velocity, "ArmState.velocity");
  require_finite(external_torque, "ArmState.external_torque");
}

ArmState step_dynamics(const ArmState& state, std::span<const JointParams> params,
                       std::span<const double> motor_torque,
                       std::span<const double> external_torque, double dt) {
  const size_t n = state.angle.size();
  if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be > 0");
  if (params.size() != n || motor_torque.size() != n || external_torque.size() != n) {
    throw std::invalid_argument("step_dynamics: vector length mismatch");
  }
  state.validate();
  require_finite(motor_torque, "motor_torque");
  require_finite(external_torque, "external_torque");

  ArmState next = state;
  for (size_t j = 0; j < n; ++j) {
    const JointParams& p = params[j];
    const double tau_m = clamp_abs(motor_torque[j], p.torque_limit);
    const double dth = state.velocity[j];
    const double tau = tau_m + external_torque[j] - p.viscous_friction * dth -
                       p.coulomb_friction * std::tanh(dth / kVelocityEpsilon) -
                       p.gravity_amplitude * std::cos(state.angle[j]);
    const double v = dth + dt * tau / p.inertia;
    next.velocity[j] = v;
    next.angle[j] = state.angle[j] + dt * v;
    next.external_torque[j] = external_torque[j];
  }
  return next;
}

void ContactObject::validate() const {
  if (stiffness < 0.0 || quadratic_stiffness < 0.0 || damping < 0.0) {
    throw std::invalid_argument("ContactObject: stiffness/damping must be >= 0");
  }
  if (!(crush_deformation > 0.0)) {
    throw std::invalid_argument("ContactObject: crush_deformation must be > 0");
  }
}

double ContactObject::crush_torque() const {
  return stiffness * crush_deformation +
         quadratic_stiffness * crush_deformation * crush_deformation;
}

double contact_torque(ContactObject& object, double gripper_angle,
                      double gripper_velocity) {
  const double x = gripper_angle - object.engage_angle;
  if (x <= 0.0) return 0.0;
  if (x > object.crush_deformation) object.crushed = true;
  double tau = -(object.stiffness * x + object.quadratic_stiffness * x * x +
                 object.damping * gripper_velocity);
  // the object can resist closing but never pull the gripper shut
  return std::min(tau, 0.0);
}

void SpongeCoupling::validate() const {
  if (torsional_stiffness < 0.0) {
    throw std::invalid_argument("SpongeCoupling: torsional_stiffness must be >= 0");
  }
  if (!(slip_coefficient > 0.0)) {
    throw std::invalid_argument("SpongeCoupling: slip_coefficient must be > 0");
  }
  left_grip.validate();
  right_grip.validate();
}

SpongeTorques sponge_coupling_torques(SpongeCoupling& coupling,
                                      double left_wrist_angle,
                                      double right_wrist_angle,
                                      double grip_left, double grip_right,
                                      bool left_engaged, bool right_engaged) {
  SpongeTorques out;
  if (!left_engaged || !right_engaged) {
    return out;  // zero torques; caller flags the tick
  }
  out.engaged = true;
  const double twist = left_wrist_angle - right_wrist_angle;
  const double tau_s =
      coupling.torsional_stiffness * (twist - coupling.rest_twist);
  const double limit =
      coupling.slip_coefficient * std::min(std::abs(grip_left), std::abs(grip_right));
  if (std::abs(tau_s) <= limit) {
    out.wrist_left = -tau_s;
    out.wrist_right = tau_s;
  } else {
    coupling.slipped = true;
    const double s = tau_s > 0.0 ? 1.0 : -1.0;
    out.wrist_left = -s * limit;
    out.wrist_right = s * limit;
  }
  return out;
}

const char* to_string(ObjectLocation loc) {
  switch (loc) {
    case ObjectLocation::source: return "source";
    case ObjectLocation::in_gripper: return "in_gripper";
    case ObjectLocation::stacked: return "stacked";
    case ObjectLocation::table: return "table";
  }
  return "?";
}

bool SceneLog::has(const std::string& name) const {
  for (const auto& e : events) {
    if (e.name == name) return true;
  }
  return false;
}

double SceneLog::time_of(const std::string& name) const {
  for (const auto& e : events) {
    if (e.name == name) return e.time;
  }
  return -1.0;
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "cup") return TaskKind::cup;
  if (s == "sponge") return TaskKind::sponge;
  throw ConfigError("unknown task '" + s + "' (expected cup|sponge)");
}

const char* to_string(TaskKind k) {
  return k == TaskKind::cup ? "cup" : "sponge";
}

namespace {

bool pose_within(const ArmState& arm, std::span<const double> pose, double tol) {
  const size_t n = std::min(pose.size(), arm.angle.size());
  for (size_t j = 0; j < n; ++j) {
    if (std::abs(arm.angle[j] - pose[j]) > tol) return false;
  }
  return true;
}

void log_event(SceneLog& log, double time, const std::string& name) {
  if (!log.has(name)) log.events.push_back({time, name});
}

}  // namespace

void update_task_objects(SceneState& scene, std::span<const double> grip_torques,
                         TaskKind task, const TaskGeometry& geom, SceneLog& log) {
  const double t = scene.time;
  if (task == TaskKind::cup) {
    SceneObject& cup = scene.objects.at(0);
    const ArmState& arm = scene.arms.at(0);
    const double grip = grip_torques[0];
    const int gj = arm.joints() - 1;
    const bool gripper_closed = arm.angle[gj] > geom.gripper_open_angle;
    const bool holding = grip >= geom.hold_torque_threshold && gripper_closed;

    if (cup.location == ObjectLocation::source) {
      if (holding && pose_within(arm, geom.grasp_pose, geom.pose_tolerance)) {
        cup.location = ObjectLocation::in_gripper;
        scene.grasped = true;
        log.grasp_time = t;
        log_event(log, t, "pick");
      }
    } else if (cup.location == ObjectLocation::in_gripper) {
      if (pose_within(arm, geom.apex_pose, geom.pose_tolerance)) {
        log_event(log, t, "move_apex");
      }
      if (!holding) {
        scene.grasped = false;
        if (log.release_time < 0.0) log.release_time = t;
        log_event(log, t, "release");
        if (pose_within(arm, geom.place_pose, geom.pose_tolerance)) {
          cup.location = ObjectLocation::stacked;
          log_event(log, t, "place");
        } else {
          cup.location = ObjectLocation::table;
          log_event(log, t, "drop");
        }
      }
    }
  } else {
    SceneObject& sponge = scene.objects.at(0);
    const ArmState& left = scene.arms.at(0);
    const ArmState& right = scene.arms.at(1);
    const bool both_holding =
        grip_torques[0] >= geom.hold_torque_threshold &&
        grip_torques[1] >= geom.hold_torque_threshold;

    if (sponge.location == ObjectLocation::source) {
      if (both_holding && pose_within(left, geom.grasp_pose, geom.pose_tolerance) &&
          pose_within(right, geom.grasp_pose, geom.pose_tolerance)) {
        sponge.location = ObjectLocation::in_gripper;
        scene.grasped = true;
        log.grasp_time = t;
        log_event(log, t, "grab");
      }
    } else if (sponge.location == ObjectLocation::in_gripper) {
      if (pose_within(left, geom.apex_pose, geom.pose_tolerance) &&
          pose_within(right, geom.apex_pose, geom.pose_tolerance)) {
        log_event(log, t, "lift");
      }
      if (!both_holding) {
        scene.grasped = false;
        if (log.release_time < 0.0) log.release_time = t;
        log_event(log, t, "release");
        sponge.location = ObjectLocation::table;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic camera

namespace {

struct Raster {
  CameraFrame* f;
  void set(int col, int row, uint8_t r, uint8_t g, uint8_t b) {
    if (col < 0 || row < 0 || col >= f->width || row >= f->height) return;
    const size_t o = 3 * (static_cast<size_t>(row) * f->width + col);
    f->pixels[o] = r;
    f->pixels[o + 1] = g;
    f->pixels[o + 2] = b;
  }
  void rect(int c0, int r0, int w, int h, uint8_t r, uint8_t g, uint8_t b) {
    for (int rr = r0; rr < r0 + h; ++rr)
      for (int cc = c0; cc < c0 + w; ++cc) set(cc, rr, r, g, b);
  }
  void line(int c0, int r0, int c1, int r1, uint8_t r, uint8_t g, uint8_t b) {
    int dc = std::abs(c1 - c0), dr = -std::abs(r1 - r0);
    int sc = c0 < c1 ? 1 : -1, sr = r0 < r1 ? 1 : -1;
    int err = dc + dr;
    for (;;) {
      set(c0, r0, r, g, b);
      if (c0 == c1 && r0 == r1) break;
      int e2 = 2 * err;
      if (e2 >= dr) { err += dr; c0 += sc; }
      if (e2 <= dc) { err += dc; r0 += sr; }
    }
  }
};

struct View {
  double scale_x, scale_y, center_x, center_y;  // scene -> pixel mapping
  int width, height;
  int col(double x) const {
    return static_cast<int>(std::lround((x - center_x) * scale_x + width / 2.0));
  }
  int row(double y) const {
    return static_cast<int>(std::lround(height * 0.85 - (y - center_y) * scale_y));
  }
};

struct ArmPoints {
  double sx, sy, ex, ey, gx, gy;  // shoulder, elbow, gripper tip
};

// Planar stick figure: J1 pans the plane, J2/J3 are the two links.
ArmPoints arm_points(const ArmState& arm, double base_x) {
  const double L = 0.35;
  const double th1 = arm.angle.size() > 0 ? arm.angle[0] : 0.0;
  const double th2 = arm.angle.size() > 1 ? arm.angle[1] : 0.0;
  const double th3 = arm.angle.size() > 2 ? arm.angle[2] : 0.0;
  ArmPoints p;
  p.sx = base_x + 0.55 * std::sin(th1);
  p.sy = 0.95;
  const double a1 = 0.9 * th2 + 0.35;
  const double a2 = a1 + 0.9 * th3;
  p.ex = p.sx + L * std::sin(a1);
  p.ey = p.sy - L * std::cos(a1);
  p.gx = p.ex + L * std::sin(a2);
  p.gy = p.ey - L * std::cos(a2);
  return p;
}

double object_x(const SceneState& scene, const TaskGeometry& geom,
                const SceneObject& obj, const ArmPoints& holder) {
  switch (obj.location) {
    case ObjectLocation::source: return geom.source_x;
    case ObjectLocation::stacked: return geom.stack_x;
    case ObjectLocation::table: return geom.drop_x;
    case ObjectLocation::in_gripper: return holder.gx;
  }
  return 0.0;
}

}  // namespace

CameraFrame render_camera(const SceneState& scene, int camera_id,
                          const CameraConfig& cameras, const TaskGeometry& geom) {
  if (camera_id < 0 || camera_id >= cameras.count) {
    throw std::invalid_argument("render_camera: unknown camera_id " +
                                std::to_string(camera_id));
  }
  CameraFrame frame;
  frame.camera_id = camera_id;
  frame.width = cameras.width;
  frame.height = cameras.height;
  frame.timestamp = scene.time;
  frame.pixels.assign(static_cast<size_t>(3) * cameras.width * cameras.height, 0);
  Raster px{&frame};

  const bool bimanual = scene.arms.size() > 1;
  std::vector<ArmPoints> pts;
  for (size_t a = 0; a < scene.arms.size(); ++a) {
    const double base = bimanual ? (a == 0 ? -0.35 : 0.35) : 0.0;
    pts.push_back(arm_points(scene.arms[a], base));
  }

  View v;
  v.width = cameras.width;
  v.height = cameras.height;
  switch (camera_id) {
    case 0:  // overhead
      v = {cameras.width * 0.42, cameras.height * 0.55, 0.0, 0.35, cameras.width,
           cameras.height};
      break;
    case 1:  // side
      v = {cameras.width * 0.34, cameras.height * 0.62, 0.05, 0.45, cameras.width,
           cameras.height};
      break;
    default: {  // gripper cam(s): zoom on the end effector
      const ArmPoints& p = pts[std::min<size_t>(camera_id - 2, pts.size() - 1)];
      v = {cameras.width * 1.0, cameras.height * 1.3, p.gx, p.gy, cameras.width,
           cameras.height};
      break;
    }
  }

  // background + table band
  px.rect(0, 0, cameras.width, cameras.height, 16, 18, 24);
  px.rect(0, v.row(0.08), cameras.width, cameras.height, 52, 44, 36);

  // static scenery: cup task shows the two base cups at the stack position
  const int ow = std::max(2, cameras.width / 9);
  const int oh = std::max(3, cameras.height / 5);
  if (scene.objects.at(0).id == "cup") {
    px.rect(v.col(geom.stack_x) - ow, v.row(0.08) - oh, 2 * ow, oh, 110, 110, 118);
  }

  // movable object
  const SceneObject& obj = scene.objects.at(0);
  const ArmPoints& holder = pts[0];
  const double ox = object_x(scene, geom, obj, holder);
  double oy = 0.08;
  if (obj.location == ObjectLocation::in_gripper) oy = holder.gy - 0.05;
  if (obj.location == ObjectLocation::stacked) oy = 0.08 + 0.06;
  const int eh = obj.crushed ? std::max(2, oh / 2) : oh;
  uint8_t orr = 205, org = 70, orb = 60;
  if (obj.id == "sponge") { orr = 220; org = 190; orb = 60; }
  px.rect(v.col(ox) - ow / 2, v.row(oy) - eh, ow, eh, orr, org, orb);

  // arms: two-link polyline plus gripper jaws whose gap tracks the grip angle
  for (size_t a = 0; a < pts.size(); ++a) {
    const ArmPoints& p = pts[a];
    const uint8_t shade = a == 0 ? 230 : 170;
    px.line(v.col(p.sx), v.row(p.sy), v.col(p.ex), v.row(p.ey), shade, shade, 245);
    px.line(v.col(p.ex), v.row(p.ey), v.col(p.gx), v.row(p.gy), shade, shade, 245);
    const ArmState& arm = scene.arms[a];
    const double open = std::max(0.0, 2.8 - arm.angle[arm.joints() - 1]);
    const int gap = 1 + static_cast<int>(std::lround(open * 6.0));
    px.line(v.col(p.gx) - gap, v.row(p.gy), v.col(p.gx) - gap, v.row(p.gy) + 4,
            245, 200, 120);
    px.line(v.col(p.gx) + gap, v.row(p.gy), v.col(p.gx) + gap, v.row(p.gy) + 4,
            245, 200, 120);
  }

  return frame;
}

// ---------------------------------------------------------------------------
// TaskWorld

TaskWorld::TaskWorld(TaskKind task, const TaskGeometry& geom,
                     const CameraConfig& cameras, const ContactObject& grip_object,
                     const SpongeCoupling& coupling, int follower_arms, int joints)
    : task_(task), geom_(geom), cameras_(cameras), coupling_(coupling) {
  grip_object.validate();
  coupling_.validate();
  grips_.assign(follower_arms, grip_object);
  grip_torques_.assign(follower_arms, 0.0);
  engaged_.assign(follower_arms, false);
  scene_.arms.assign(follower_arms, ArmState::zeros(joints));
  scene_.objects.push_back(
      {task == TaskKind::cup ? "cup" : "sponge", ObjectLocation::source, false});
}

std::vector<std::vector<double>> TaskWorld::external_torques(
    const std::vector<ArmState>& followers) {
  const int arms = static_cast<int>(followers.size());
  std::vector<std::vector<double>> out(arms);
  const SceneObject& obj = scene_.objects[0];
  for (int a = 0; a < arms; ++a) {
    const ArmState& arm = followers[a];
    out[a].assign(arm.joints(), 0.0);
    const bool near_source = obj.location == ObjectLocation::source &&
                             pose_within(arm, geom_.grasp_pose, geom_.pose_tolerance);
    const bool active = near_source || obj.location == ObjectLocation::in_gripper;
    const int gj = arm.joints() - 1;
    double tau = 0.0;
    if (active) {
      tau = contact_torque(grips_[a], arm.angle[gj], arm.velocity[gj]);
    }
    out[a][gj] = tau;
    grip_torques_[a] = -tau;
    engaged_[a] = active && arm.angle[gj] > grips_[a].engage_angle;
  }
  if (task_ == TaskKind::sponge && arms == 2) {
    const int wj = followers[0].joints() - 2;
    const SpongeTorques st = sponge_coupling_torques(
        coupling_, followers[0].angle[wj], followers[1].angle[wj],
        grip_torques_[0], grip_torques_[1], engaged_[0], engaged_[1]);
    out[0][wj] += st.wrist_left;
    out[1][wj] += st.wrist_right;
  }
  return out;
}

void TaskWorld::update(const std::vector<ArmState>& followers, double time) {
  scene_.arms = followers;
  scene_.time = time;
  update_task_objects(scene_, grip_torques_, task_, geom_, log_);
  for (auto& g : grips_) {
    if (g.crushed && !log_.crushed) {
      log_.crushed = true;
      scene_.objects[0].crushed = true;
      log_.events.push_back({time, "crush"});
    }
  }
  if (coupling_.slipped && !log_.slipped) {
    log_.slipped = true;
    log_.events.push_back({time, "slip"});
  }
  if (task_ == TaskKind::sponge && scene_.grasped && !twist_reached_ &&
      !coupling_.slipped &&
      std::abs(sponge_twist() - coupling_.rest_twist) >= geom_.twist_goal) {
    twist_reached_ = true;
    log_.events.push_back({time, "twist_goal"});
  }
}

double TaskWorld::sponge_twist() const {
  if (scene_.arms.size() < 2) return 0.0;
  const int wj = scene_.arms[0].joints() - 2;
  return scene_.arms[0].angle[wj] - scene_.arms[1].angle[wj];
}

CameraFrame TaskWorld::render(int camera_id, double time) const {
  SceneState s = scene_;
  s.time = time;
  return render_camera(s, camera_id, cameras_, geom_);
}

bool TaskWorld::crushed() const {
  for (const auto& g : grips_) {
    if (g.crushed) return true;
  }
  return false;
}

}  // namespace bilat
