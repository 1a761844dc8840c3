#include "bilat/recorder.hpp"

#include <algorithm>
#include <cmath>

namespace bilat {

void SessionConfig::validate() const {
  if (joint_count < 2) throw ConfigError("SessionConfig: joint_count must be >= 2");
  if (follower_arms != 1 && follower_arms != 2) {
    throw ConfigError("SessionConfig: follower_arms must be 1 or 2");
  }
  if (task == TaskKind::sponge && follower_arms != 2) {
    throw ConfigError("SessionConfig: sponge task is bimanual");
  }
  if (static_cast<int>(plant.size()) != joint_count) {
    throw ConfigError("SessionConfig: plant params must cover every joint");
  }
  for (const auto& p : plant) p.validate();
  gains.validate();
  observers.validate();
  if (control_rate <= 0 || image_rate <= 0 || control_rate % image_rate != 0) {
    throw ConfigError("SessionConfig: control_rate must be a multiple of image_rate");
  }
}

void ExpertScript::validate(const SessionConfig& cfg) const {
  if (waypoints.size() < 2) throw ConfigError("ExpertScript: need >= 2 waypoints");
  const size_t dims = static_cast<size_t>(cfg.joint_count - 1) * cfg.follower_arms;
  double last = -1.0;
  for (const auto& w : waypoints) {
    if (w.pose.size() != dims) {
      throw ConfigError("ExpertScript: waypoint pose dims != (N-1)*arms");
    }
    if (w.time <= last && &w != &waypoints.front()) {
      throw ConfigError("ExpertScript: waypoint times must increase");
    }
    last = w.time;
  }
  if (grippers.size() != static_cast<size_t>(cfg.follower_arms)) {
    throw ConfigError("ExpertScript: one grip phase per arm required");
  }
  const double crush = cfg.grip_object.crush_torque();
  for (const auto& g : grippers) {
    if (!(g.torque_target > 0.0) || g.torque_target >= crush) {
      throw ConfigError("ExpertScript: torque_target must lie in the object's pre-crush range");
    }
  }
}

namespace {

// minimum-jerk blend and its time derivative
inline double mj(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
inline double mj_rate(double u) { return u * u * (30.0 + u * (-60.0 + 30.0 * u)); }

}  // namespace

ScriptRunner::ScriptRunner(const ExpertScript& script, const SessionConfig& cfg,
                           uint64_t seed)
    : script_(script),
      joints_(cfg.joint_count),
      arms_(cfg.follower_arms),
      open_angle_(cfg.geometry.gripper_open_angle),
      triggered_(cfg.follower_arms, false),
      hold_angle_(cfg.follower_arms, cfg.geometry.gripper_open_angle) {
  script.validate(cfg);
  Rng rng(mix64(seed ^ 0x5eed5c41f7ull));
  for (auto& w : script_.waypoints) {
    for (double& p : w.pose) p += rng.uniform(-script_.pose_jitter, script_.pose_jitter);
  }
  // keep endpoints pinned so the episode length is unchanged
  for (size_t i = 1; i + 1 < script_.waypoints.size(); ++i) {
    double t = script_.waypoints[i].time +
               rng.uniform(-script_.time_jitter, script_.time_jitter);
    t = std::max(t, script_.waypoints[i - 1].time + 0.05);
    t = std::min(t, script_.waypoints[i + 1].time - 0.05);
    script_.waypoints[i].time = t;
  }
  for (auto& g : script_.grippers) {
    g.torque_target *= 1.0 + rng.uniform(-script_.torque_jitter_frac,
                                         script_.torque_jitter_frac);
  }
}

void ScriptRunner::targets(double t, std::span<const double> follower_grip,
                           std::vector<double>& pose, std::vector<double>& velocity) {
  const int n = joints_;
  pose.assign(static_cast<size_t>(n) * arms_, 0.0);
  velocity.assign(pose.size(), 0.0);

  // arm joints: piecewise minimum-jerk through the waypoints
  const auto& wps = script_.waypoints;
  size_t seg = 0;
  while (seg + 2 < wps.size() && t >= wps[seg + 1].time) ++seg;
  const auto& a = wps[seg];
  const auto& b = wps[seg + 1];
  double u = (t - a.time) / (b.time - a.time);
  u = std::clamp(u, 0.0, 1.0);
  const double s = mj(u);
  const double sdot = mj_rate(u) / (b.time - a.time);
  for (int arm = 0; arm < arms_; ++arm) {
    for (int j = 0; j < n - 1; ++j) {
      const size_t k = static_cast<size_t>(arm) * (n - 1) + j;
      pose[static_cast<size_t>(arm) * n + j] = a.pose[k] + s * (b.pose[k] - a.pose[k]);
      velocity[static_cast<size_t>(arm) * n + j] = sdot * (b.pose[k] - a.pose[k]);
    }
  }

  // grippers: close at a fixed rate until the follower feels the target torque
  for (int arm = 0; arm < arms_; ++arm) {
    const auto& g = script_.grippers[arm];
    double angle = open_angle_;
    double rate = 0.0;
    if (t >= g.close_start && !triggered_[arm]) {
      angle = open_angle_ + g.close_rate * (t - g.close_start);
      rate = g.close_rate;
      if (follower_grip[arm] >= g.torque_target) {
        triggered_[arm] = true;
        hold_angle_[arm] = angle;
      }
    }
    if (triggered_[arm]) {
      angle = hold_angle_[arm];
      rate = 0.0;
    }
    if (g.open_start >= 0.0 && t >= g.open_start) {
      const double down = g.open_rate * (t - g.open_start);
      const double base = triggered_[arm] ? hold_angle_[arm] : angle;
      angle = std::max(open_angle_, base - down);
      rate = angle > open_angle_ ? -g.open_rate : 0.0;
    }
    pose[static_cast<size_t>(arm) * n + (n - 1)] = angle;
    velocity[static_cast<size_t>(arm) * n + (n - 1)] = rate;
  }
}

SessionResult record_session(const SessionConfig& cfg, const ExpertScript& script,
                             const std::string& instruction_raw,
                             const std::string& instruction_normalized,
                             double duration, uint64_t seed,
                             bool capture_telemetry) {
  cfg.validate();
  const double dt = cfg.dt();
  const int tpf = cfg.control_rate / cfg.image_rate;
  const int64_t ticks = std::llround(duration * cfg.control_rate);
  if (ticks <= 0 || ticks % tpf != 0) {
    throw std::invalid_argument("record_session: duration must be a positive multiple of the image period");
  }
  const int64_t frame_count = ticks / tpf;

  const int n = cfg.joint_count;
  const int arms = cfg.follower_arms;

  // initial pose: first waypoint with the gripper open
  auto init_arm = [&](int arm) {
    ArmState s = ArmState::zeros(n);
    for (int j = 0; j < n - 1; ++j) {
      s.angle[j] = script.waypoints.front().pose[static_cast<size_t>(arm) * (n - 1) + j];
    }
    s.angle[n - 1] = cfg.geometry.gripper_open_angle;
    return s;
  };
  std::vector<ArmState> leader(arms), follower(arms);
  for (int a = 0; a < arms; ++a) leader[a] = follower[a] = init_arm(a);

  TaskWorld world(cfg.task, cfg.geometry, cfg.cameras, cfg.grip_object, cfg.coupling,
                  arms, n);
  world.update(follower, 0.0);

  std::vector<BilateralPair> pairs;
  pairs.reserve(arms);
  for (int a = 0; a < arms; ++a) pairs.emplace_back(cfg.gains, cfg.observers, n);

  ScriptRunner runner(script, cfg, seed);

  SessionResult result;
  Episode& ep = result.episode;
  ep.task = to_string(cfg.task);
  ep.instruction_raw = instruction_raw;
  ep.instruction = instruction_normalized;
  ep.control_rate = cfg.control_rate;
  ep.image_rate = cfg.image_rate;
  ep.joint_count = n;
  ep.arm_count = 2 * arms;
  ep.seed = seed;
  ep.samples = ticks;
  ep.frames = frame_count;
  ep.leader.resize(static_cast<size_t>(ticks) * ep.channels());
  ep.follower.resize(ep.leader.size());

  auto store = std::make_shared<FrameStore>();
  store->cameras.resize(cfg.cameras.count);
  for (auto& c : store->cameras) {
    c.width = cfg.cameras.width;
    c.height = cfg.cameras.height;
    c.pixels.reserve(static_cast<size_t>(frame_count) * c.frame_bytes());
  }

  std::vector<double> script_pose, script_vel;
  std::vector<double> grip(arms, 0.0);

  for (int64_t k = 0; k < ticks; ++k) {
    const double t = k * dt;

    if (k % tpf == 0) {
      for (int c = 0; c < cfg.cameras.count; ++c) {
        CameraFrame f = world.render(c, t);
        store->cameras[c].pixels.insert(store->cameras[c].pixels.end(),
                                        f.pixels.begin(), f.pixels.end());
      }
    }

    // follower-side environment torques for the current states
    auto env = world.external_torques(follower);
    for (int a = 0; a < arms; ++a) grip[a] = world.grip_torques()[a];

    // expert targets use this tick's felt grip torque (RFOB of previous tick)
    std::vector<double> grip_est(arms, 0.0);
    for (int a = 0; a < arms; ++a) {
      grip_est[a] = pairs[a].follower_observer().external[n - 1];
    }
    runner.targets(t, grip_est, script_pose, script_vel);

    for (int a = 0; a < arms; ++a) {
      // operator hand drags the leader along the script
      std::vector<double> hand(n, 0.0);
      for (int j = 0; j < n; ++j) {
        const size_t kji = static_cast<size_t>(a) * n + j;
        hand[j] = cfg.hand.stiffness * (script_pose[kji] - leader[a].angle[j]) +
                  cfg.hand.damping * (script_vel[kji] - leader[a].velocity[j]);
      }

      const auto cmds = pairs[a].step(leader[a], follower[a], dt);

      // record (angle, velocity, tau_ext) with this tick's RFOB estimates
      for (int j = 0; j < n; ++j) {
        ep.at(ep.leader, k, a, j, 0) = static_cast<float>(leader[a].angle[j]);
        ep.at(ep.leader, k, a, j, 1) = static_cast<float>(leader[a].velocity[j]);
        ep.at(ep.leader, k, a, j, 2) =
            static_cast<float>(pairs[a].leader_observer().external[j]);
        ep.at(ep.follower, k, a, j, 0) = static_cast<float>(follower[a].angle[j]);
        ep.at(ep.follower, k, a, j, 1) = static_cast<float>(follower[a].velocity[j]);
        ep.at(ep.follower, k, a, j, 2) =
            static_cast<float>(pairs[a].follower_observer().external[j]);
      }
      if (capture_telemetry) {
        result.commands_leader.push_back(cmds.leader);
        result.commands_follower.push_back(cmds.follower);
      }

      leader[a] = step_dynamics(leader[a], cfg.plant, cmds.leader, hand, dt);
      follower[a] = step_dynamics(follower[a], cfg.plant, cmds.follower, env[a], dt);
    }

    world.update(follower, t + dt);
  }

  ep.camera = store;
  result.log = world.log();

  nlohmann::json log_json;
  log_json["crushed"] = result.log.crushed;
  log_json["slipped"] = result.log.slipped;
  log_json["grasp_time"] = result.log.grasp_time;
  log_json["release_time"] = result.log.release_time;
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : result.log.events) {
    events.push_back({{"time", e.time}, {"name", e.name}});
  }
  log_json["events"] = events;
  ep.annotations["scene_log"] = log_json;
  const double hold_end = result.log.release_time >= 0.0 ? result.log.release_time : duration;
  ep.annotations["hold_window"] = {result.log.grasp_time, hold_end};
  ep.validate();
  return result;
}

}  // namespace bilat
