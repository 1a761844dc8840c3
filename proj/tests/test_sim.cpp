#include <doctest.h>

#include <cmath>
#include <random>

#include "bilat/sim.hpp"

using namespace bilat;

namespace {

std::vector<JointParams> uniform_params(int n, JointParams p) {
  return std::vector<JointParams>(n, p);
}

double kinetic_energy(const ArmState& s, const std::vector<JointParams>& p) {
  double e = 0.0;
  for (int j = 0; j < s.joints(); ++j) e += 0.5 * p[j].inertia * s.velocity[j] * s.velocity[j];
  return e;
}

}  // namespace

TEST_CASE("step_dynamics holds the all-zero equilibrium") {
  JointParams p;
  p.gravity_amplitude = 0.0;
  auto params = uniform_params(3, p);
  ArmState s = ArmState::zeros(3);
  std::vector<double> zero(3, 0.0);
  ArmState next = step_dynamics(s, params, zero, zero, 1e-3);
  CHECK(next.angle == s.angle);
  CHECK(next.velocity == s.velocity);
}

TEST_CASE("step_dynamics single Euler step from rest") {
  // J=0.1, everything else zero, tau=0.1, dt=1e-3:
  // v = dt * tau/J = 1e-3, theta = dt * v = 1e-6
  JointParams p;
  p.inertia = 0.1;
  p.viscous_friction = 0.0;
  p.coulomb_friction = 0.0;
  p.gravity_amplitude = 0.0;
  auto params = uniform_params(1, p);
  ArmState s = ArmState::zeros(1);
  std::vector<double> tau{0.1}, zero{0.0};
  ArmState next = step_dynamics(s, params, tau, zero, 1e-3);
  CHECK(next.velocity[0] == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(next.angle[0] == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("motor torque saturates at the joint limit") {
  JointParams p;
  p.torque_limit = 5.0;
  auto params = uniform_params(1, p);
  ArmState s = ArmState::zeros(1);
  std::vector<double> zero{0.0};
  std::vector<double> over{40.0}, at{5.0};
  ArmState a = step_dynamics(s, params, over, zero, 1e-3);
  ArmState b = step_dynamics(s, params, at, zero, 1e-3);
  CHECK(a.angle[0] == b.angle[0]);
  CHECK(a.velocity[0] == b.velocity[0]);
}

TEST_CASE("step_dynamics rejects non-finite input") {
  auto params = uniform_params(1, JointParams{});
  ArmState s = ArmState::zeros(1);
  std::vector<double> bad{std::nan("")}, zero{0.0};
  CHECK_THROWS_AS(step_dynamics(s, params, bad, zero, 1e-3), std::invalid_argument);
  CHECK_THROWS_AS(step_dynamics(s, params, zero, zero, 0.0), std::invalid_argument);
}

TEST_CASE("kinetic energy never grows without drive or gravity") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    JointParams p;
    p.inertia = 0.02 + 0.2 * u(rng);
    // keep the explicit friction update contraction-stable:
    // dt*(D + tau_c/eps_v)/J <= 1 at dt=1e-3
    p.viscous_friction = 0.4 * p.inertia * u(rng) * 1e3 * 1e-3;
    p.coulomb_friction = 0.5 * p.inertia * kVelocityEpsilon * 1e3 * u(rng);
    p.gravity_amplitude = 0.0;
    auto params = uniform_params(2, p);
    ArmState s = ArmState::zeros(2);
    s.velocity[0] = -2.0 + 4.0 * u(rng);
    s.velocity[1] = -2.0 + 4.0 * u(rng);
    std::vector<double> zero(2, 0.0);
    double e = kinetic_energy(s, params);
    for (int k = 0; k < 400; ++k) {
      s = step_dynamics(s, params, zero, zero, 1e-3);
      const double e2 = kinetic_energy(s, params);
      CHECK(e2 <= e + 1e-15);
      e = e2;
    }
  }
}

TEST_CASE("contact torque engages past theta_c") {
  ContactObject obj;
  obj.engage_angle = 2.40;
  obj.stiffness = 2.0;
  obj.quadratic_stiffness = 0.0;
  obj.damping = 0.0;

  SUBCASE("not engaged") { CHECK(contact_torque(obj, 2.30, 0.0) == 0.0); }
  SUBCASE("linear spring") {
    CHECK(contact_torque(obj, 2.45, 0.0) == doctest::Approx(-0.10));
  }
  SUBCASE("continuous at the boundary") {
    CHECK(std::abs(contact_torque(obj, 2.40 + 1e-9, 0.0)) < 1e-8);
    CHECK(contact_torque(obj, 2.40 - 1e-9, 0.0) == 0.0);
  }
  SUBCASE("never pulls the gripper closed") {
    // fast opening motion: damping would make tau positive without the clamp
    CHECK(contact_torque(obj, 2.45, -100.0) <= 0.0);
  }
}

TEST_CASE("crush latches once deformation exceeds the limit") {
  ContactObject obj;
  obj.engage_angle = 2.40;
  obj.crush_deformation = 0.45;
  contact_torque(obj, 2.40 + 0.44, 0.0);
  CHECK(!obj.crushed);
  contact_torque(obj, 2.40 + 0.45 + 1e-6, 0.0);
  CHECK(obj.crushed);
  contact_torque(obj, 2.0, 0.0);  // disengaging does not reset the flag
  CHECK(obj.crushed);
}

TEST_CASE("sponge coupling sticks below the slip limit") {
  SpongeCoupling c;
  c.torsional_stiffness = 1.0;
  c.rest_twist = 0.0;

  SUBCASE("rest twist gives zero torque") {
    auto t = sponge_coupling_torques(c, 0.1, 0.1, 1.0, 1.0, true, true);
    CHECK(t.wrist_left == doctest::Approx(0.0));
    CHECK(t.wrist_right == doctest::Approx(0.0));
    CHECK(t.engaged);
  }
  SUBCASE("stick regime transmits the spring torque") {
    auto t = sponge_coupling_torques(c, 0.2, 0.0, 1.0, 1.0, true, true);
    CHECK(t.wrist_left == doctest::Approx(-0.2));
    CHECK(t.wrist_right == doctest::Approx(0.2));
    CHECK(!c.slipped);
  }
  SUBCASE("slip clamps at the transmissible limit") {
    c.slip_coefficient = 1.0;
    // mu*min(|0.1|, |0.5|) = 0.1 < tau_s = 0.2
    auto t = sponge_coupling_torques(c, 0.2, 0.0, 0.1, 0.5, true, true);
    CHECK(c.slipped);
    CHECK(t.wrist_left == doctest::Approx(-0.1));
    CHECK(t.wrist_right == doctest::Approx(0.1));
  }
  SUBCASE("not engaged yields zero torques and a diagnostic") {
    auto t = sponge_coupling_torques(c, 0.3, 0.0, 1.0, 1.0, true, false);
    CHECK(t.wrist_left == 0.0);
    CHECK(t.wrist_right == 0.0);
    CHECK(!t.engaged);
  }
}

TEST_CASE("sponge stick torques are action-reaction") {
  SpongeCoupling c;
  c.torsional_stiffness = 0.7;
  c.rest_twist = 0.05;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 100; ++i) {
    const double wl = u(rng), wr = u(rng);
    auto t = sponge_coupling_torques(c, wl, wr, 5.0, 5.0, true, true);
    CHECK(t.wrist_left == doctest::Approx(-t.wrist_right).epsilon(1e-12));
  }
}

namespace {

TaskGeometry cup_geometry() {
  TaskGeometry g;
  g.home_pose = {0.0, 0.0, 0.0, 0.0};
  g.grasp_pose = {0.3, 0.4, 0.3, 0.2};
  g.apex_pose = {0.0, 0.25, 0.3, 0.2};
  g.place_pose = {-0.3, 0.4, 0.3, 0.2};
  return g;
}

SceneState cup_scene(const TaskGeometry& g, const std::vector<double>& arm_pose,
                     double gripper_angle) {
  SceneState s;
  ArmState a = ArmState::zeros(5);
  for (int j = 0; j < 4; ++j) a.angle[j] = arm_pose[j];
  a.angle[4] = gripper_angle;
  s.arms.push_back(a);
  s.objects.push_back({"cup", ObjectLocation::source, false});
  return s;
}

}  // namespace

TEST_CASE("cup task object transitions") {
  TaskGeometry g = cup_geometry();
  SceneLog log;

  SUBCASE("grasp at pose with enough torque picks the cup") {
    SceneState s = cup_scene(g, g.grasp_pose, 2.5);
    std::vector<double> grip{0.03};
    s.time = 1.0;
    update_task_objects(s, grip, TaskKind::cup, g, log);
    CHECK(s.objects[0].location == ObjectLocation::in_gripper);
    CHECK(s.grasped);
    CHECK(log.has("pick"));
    CHECK(log.grasp_time == doctest::Approx(1.0));
  }
  SUBCASE("too little torque does not pick") {
    SceneState s = cup_scene(g, g.grasp_pose, 2.5);
    std::vector<double> grip{0.005};
    update_task_objects(s, grip, TaskKind::cup, g, log);
    CHECK(s.objects[0].location == ObjectLocation::source);
  }
  SUBCASE("release far from the stack drops the cup") {
    SceneState s = cup_scene(g, g.grasp_pose, 2.5);
    std::vector<double> grip{0.03};
    update_task_objects(s, grip, TaskKind::cup, g, log);
    for (int j = 0; j < 4; ++j) s.arms[0].angle[j] = 0.5 * (g.grasp_pose[j] + g.place_pose[j]);
    s.time = 2.0;
    std::vector<double> none{0.0};
    update_task_objects(s, none, TaskKind::cup, g, log);
    CHECK(s.objects[0].location == ObjectLocation::table);
    CHECK(log.has("drop"));
    CHECK(!log.has("place"));
  }
  SUBCASE("release at the place pose stacks the cup") {
    SceneState s = cup_scene(g, g.grasp_pose, 2.5);
    std::vector<double> grip{0.03};
    update_task_objects(s, grip, TaskKind::cup, g, log);
    for (int j = 0; j < 4; ++j) s.arms[0].angle[j] = g.place_pose[j];
    std::vector<double> none{0.0};
    update_task_objects(s, none, TaskKind::cup, g, log);
    CHECK(s.objects[0].location == ObjectLocation::stacked);
    CHECK(log.has("place"));
  }
}

TEST_CASE("camera rendering is deterministic and scene-sensitive") {
  TaskGeometry g = cup_geometry();
  CameraConfig cams;
  SceneState s = cup_scene(g, g.grasp_pose, 2.2);

  CameraFrame f1 = render_camera(s, 0, cams, g);
  CameraFrame f2 = render_camera(s, 0, cams, g);
  CHECK(f1.pixels.size() == 3u * 64 * 48);
  CHECK(f1.pixels == f2.pixels);

  SceneState s2 = s;
  s2.objects[0].location = ObjectLocation::stacked;
  CameraFrame f3 = render_camera(s2, 0, cams, g);
  CHECK(f1.pixels != f3.pixels);

  CHECK_THROWS_AS(render_camera(s, 7, cams, g), std::invalid_argument);
}
