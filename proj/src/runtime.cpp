#include "bilat/runtime.hpp"

#include <cmath>
#include <fstream>

namespace bilat {

void EnsembleState::push(int64_t issue_tick, Matrix actions) {
  chunks.push_back({issue_tick, std::move(actions)});
  while (static_cast<int>(chunks.size()) > capacity) chunks.pop_front();
}

std::vector<double> temporal_ensemble(EnsembleState& state, int64_t tick) {
  const Eigen::Index dim = state.chunks.empty() ? 0 : state.chunks.back().actions.cols();
  std::vector<const EnsembleState::PendingChunk*> covering;
  for (const auto& c : state.chunks) {
    if (tick >= c.issue_tick && tick < c.issue_tick + c.actions.rows()) {
      covering.push_back(&c);
    }
  }
  if (!state.enabled && !covering.empty()) {
    covering.erase(covering.begin(), covering.end() - 1);  // newest only
  }
  if (covering.empty()) {
    ++state.gap_count;
    if (state.last_target.empty()) {
      throw std::logic_error("temporal_ensemble: no chunk covers the first tick");
    }
    return state.last_target;
  }
  std::vector<double> out(dim, 0.0);
  double total = 0.0;
  for (const auto* c : covering) {
    const int64_t age = tick - c->issue_tick;
    const double w = std::exp(-state.decay * static_cast<double>(age));
    total += w;
    for (Eigen::Index i = 0; i < dim; ++i) {
      out[i] += w * c->actions(age, i);
    }
  }
  for (double& v : out) v /= total;
  state.last_target = out;
  return out;
}

std::vector<double> interpolate_to_control_rate(const std::vector<double>& prev,
                                                const std::vector<double>& next,
                                                double phase, int joint_count,
                                                int arms) {
  if (prev.size() != next.size() ||
      prev.size() != static_cast<size_t>(joint_count) * arms * 3) {
    throw std::invalid_argument("interpolate_to_control_rate: shape mismatch");
  }
  std::vector<double> out(prev.size());
  for (int a = 0; a < arms; ++a) {
    for (int j = 0; j < joint_count; ++j) {
      const size_t base = (static_cast<size_t>(a) * joint_count + j) * 3;
      out[base] = prev[base] + phase * (next[base] - prev[base]);
      out[base + 1] = prev[base + 1] + phase * (next[base + 1] - prev[base + 1]);
      out[base + 2] = prev[base + 2];  // torque: zero-order hold
    }
  }
  return out;
}

void RolloutConfig::validate() const {
  if (!(duration > 0.0)) throw ConfigError("RolloutConfig: duration must be > 0");
  if (policy_rate <= 0 || control_rate <= 0 || control_rate % policy_rate != 0) {
    throw ConfigError("RolloutConfig: control_rate must be a multiple of policy_rate");
  }
  if (instruction.empty()) throw ConfigError("RolloutConfig: instruction required");
  if (replan_interval < 1) throw ConfigError("RolloutConfig: replan_interval must be >= 1");
}

AutonomousTick autonomous_tick(ArmState& follower, ObserverState& observer,
                               const ControllerGains& gains, const ObserverConfig& ocfg,
                               std::span<const JointParams> plant,
                               std::span<const double> leader_target,
                               std::span<const double> env_torque, double dt) {
  const int n = follower.joints();
  if (leader_target.size() != static_cast<size_t>(n) * 3) {
    throw std::invalid_argument("autonomous_tick: leader target must be 3N values");
  }
  // predicted leader triple stands in for the measured leader state
  ArmState leader_proxy = ArmState::zeros(n);
  std::vector<double> tau_leader(n);
  for (int j = 0; j < n; ++j) {
    leader_proxy.angle[j] = leader_target[3 * j];
    leader_proxy.velocity[j] = leader_target[3 * j + 1];
    tau_leader[j] = leader_target[3 * j + 2];
  }
  rfob_update(observer, follower.angle, follower.velocity, ocfg);
  const AccelRefs refs =
      four_channel_step(leader_proxy, follower, tau_leader, observer.external, gains);
  AutonomousTick out;
  out.command = torque_command(refs.follower, observer.disturbance, gains, plant,
                               &out.saturated);
  dob_update(observer, out.command, follower.velocity, ocfg, dt);
  out.tau_ext_hat = observer.external;
  follower = step_dynamics(follower, plant, out.command, env_torque, dt);
  return out;
}

RolloutResult run_rollout(const ModelParams& params, const SessionConfig& session,
                          const RolloutConfig& rollout, const LanguageEncoder& encoder) {
  session.validate();
  rollout.validate();
  if (session.image_rate != rollout.policy_rate) {
    throw ConfigError("run_rollout: policy queries are frame-locked; image_rate must equal policy_rate");
  }
  if (session.control_rate != rollout.control_rate) {
    throw ConfigError("run_rollout: session and rollout control rates differ");
  }
  const PolicyConfig& pc = params.config;
  if (pc.joint_count != session.joint_count ||
      pc.leader_arms() != session.follower_arms ||
      pc.camera_count != session.cameras.count) {
    throw ConfigError("run_rollout: checkpoint geometry does not match the session");
  }

  const double dt = session.dt();
  const int tpq = rollout.control_rate / rollout.policy_rate;
  const int64_t ticks = std::llround(rollout.duration * rollout.control_rate);
  if (ticks <= 0 || ticks % tpq != 0) {
    throw ConfigError("run_rollout: duration must be a positive multiple of the policy period");
  }
  const int n = session.joint_count;
  const int arms = session.follower_arms;
  const int channels = n * arms * 3;

  const LanguageEmbedding embedding = encoder.encode(rollout.instruction);

  std::vector<ArmState> follower(arms);
  for (int a = 0; a < arms; ++a) {
    follower[a] = ArmState::zeros(n);
    for (int j = 0; j < n - 1 && j < static_cast<int>(session.geometry.home_pose.size());
         ++j) {
      follower[a].angle[j] = session.geometry.home_pose[j];
    }
    follower[a].angle[n - 1] = session.geometry.gripper_open_angle;
  }
  std::vector<ObserverState> observers(arms, ObserverState::zeros(n));

  TaskWorld world(session.task, session.geometry, session.cameras, session.grip_object,
                  session.coupling, arms, n);
  world.update(follower, 0.0);

  ModelContext ctx(params, /*training=*/false);
  EnsembleState ensemble;
  ensemble.decay = rollout.ensemble_decay;
  ensemble.enabled = rollout.ensembling;
  ensemble.capacity = pc.chunk_size;

  RolloutResult result;
  Episode& ep = result.episode;
  ep.task = to_string(session.task);
  ep.instruction_raw = rollout.instruction;
  ep.instruction = encoder.normalize(rollout.instruction);
  ep.control_rate = rollout.control_rate;
  ep.image_rate = session.image_rate;
  ep.joint_count = n;
  ep.arm_count = 2 * arms;
  ep.seed = rollout.seed;
  ep.samples = ticks;
  ep.frames = ticks / tpq;
  ep.leader.resize(static_cast<size_t>(ticks) * channels);
  ep.follower.resize(ep.leader.size());

  auto store = std::make_shared<FrameStore>();
  store->cameras.resize(session.cameras.count);
  for (auto& c : store->cameras) {
    c.width = session.cameras.width;
    c.height = session.cameras.height;
    c.pixels.reserve(static_cast<size_t>(ep.frames) * c.frame_bytes());
  }

  // async mode: the chunk computed at one query is delivered at the next
  std::optional<EnsembleState::PendingChunk> mailbox;

  std::vector<double> prev_target, next_target;
  std::vector<double> last_command(channels / 3 * arms, 0.0);
  std::vector<double> obs(channels, 0.0);
  double delta_sum = 0.0;
  int64_t delta_count = 0;

  for (int64_t k = 0; k < ticks; ++k) {
    const double t = k * dt;

    if (k % tpq == 0) {
      const int64_t p = k / tpq;

      std::vector<Matrix> frames;
      frames.reserve(session.cameras.count);
      for (int c = 0; c < session.cameras.count; ++c) {
        CameraFrame f = world.render(c, t);
        store->cameras[c].pixels.insert(store->cameras[c].pixels.end(),
                                        f.pixels.begin(), f.pixels.end());
        frames.push_back(frame_to_matrix(f.pixels.data(), f.width, f.height));
      }

      // observation: current follower state with this tick's RFOB estimates
      for (int a = 0; a < arms; ++a) {
        rfob_update(observers[a], follower[a].angle, follower[a].velocity,
                    session.observers);
        for (int j = 0; j < n; ++j) {
          const size_t base = (static_cast<size_t>(a) * n + j) * 3;
          obs[base] = follower[a].angle[j];
          obs[base + 1] = follower[a].velocity[j];
          obs[base + 2] = observers[a].external[j];
        }
      }

      if (p % rollout.replan_interval == 0) {
        if (mailbox) {
          ensemble.push(mailbox->issue_tick, std::move(mailbox->actions));
          mailbox.reset();
        }
        Matrix chunk = infer_chunk(ctx, obs, frames, embedding);
        if (rollout.async_inference) {
          mailbox = EnsembleState::PendingChunk{p, std::move(chunk)};
        } else {
          ensemble.push(p, std::move(chunk));
        }
      }
      if (ensemble.chunks.empty() && ensemble.last_target.empty()) {
        // nothing delivered yet (async warm-up): hold the current state
        ensemble.last_target = obs;
      }
      prev_target = temporal_ensemble(ensemble, p);
      next_target = temporal_ensemble(ensemble, p + 1);
    }

    const double phase = static_cast<double>(k % tpq) / tpq;
    const std::vector<double> target =
        interpolate_to_control_rate(prev_target, next_target, phase, n, arms);

    auto env = world.external_torques(follower);
    for (int a = 0; a < arms; ++a) {
      std::span<const double> slice(target.data() + static_cast<size_t>(a) * n * 3,
                                    static_cast<size_t>(n) * 3);
      AutonomousTick tick = autonomous_tick(follower[a], observers[a], session.gains,
                                            session.observers, session.plant, slice,
                                            env[a], dt);
      for (int j = 0; j < n; ++j) {
        const size_t base = (static_cast<size_t>(a) * n + j) * 3;
        ep.at(ep.leader, k, a, j, 0) = static_cast<float>(slice[3 * j]);
        ep.at(ep.leader, k, a, j, 1) = static_cast<float>(slice[3 * j + 1]);
        ep.at(ep.leader, k, a, j, 2) = static_cast<float>(slice[3 * j + 2]);
        ep.at(ep.follower, k, a, j, 0) = static_cast<float>(follower[a].angle[j]);
        ep.at(ep.follower, k, a, j, 1) = static_cast<float>(follower[a].velocity[j]);
        ep.at(ep.follower, k, a, j, 2) = static_cast<float>(tick.tau_ext_hat[j]);
        const size_t cj = static_cast<size_t>(a) * n + j;
        if (k > 0) {
          delta_sum += std::abs(tick.command[j] - last_command[cj]);
          ++delta_count;
        }
        last_command[cj] = tick.command[j];
        if (tick.saturated[j]) ++result.saturation_ticks;
      }
    }
    world.update(follower, t + dt);
  }

  ep.camera = store;
  result.log = world.log();
  result.ensemble_gaps = ensemble.gap_count;
  result.mean_command_delta = delta_count > 0 ? delta_sum / delta_count : 0.0;

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
  const double hold_end =
      result.log.release_time >= 0.0 ? result.log.release_time : rollout.duration;
  ep.annotations["hold_window"] = {result.log.grasp_time, hold_end};
  ep.annotations["rollout"] = {{"ensembling", rollout.ensembling},
                               {"replan_interval", rollout.replan_interval},
                               {"async_inference", rollout.async_inference},
                               {"ensemble_gaps", result.ensemble_gaps},
                               {"saturation_ticks", result.saturation_ticks},
                               {"mean_command_delta", result.mean_command_delta}};
  ep.validate();
  return result;
}

void write_rollout_telemetry(const RolloutResult& result,
                             const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + csv_path.string());
  const Episode& ep = result.episode;
  const int arms = ep.leader_arms();
  out << "tick,time";
  for (int a = 0; a < arms; ++a) {
    for (int j = 0; j < ep.joint_count; ++j) {
      out << ",target_angle_a" << a << "j" << j << ",target_velocity_a" << a << "j" << j
          << ",target_torque_a" << a << "j" << j << ",angle_a" << a << "j" << j
          << ",velocity_a" << a << "j" << j << ",tau_ext_a" << a << "j" << j;
    }
  }
  out << "\n";
  out.precision(10);
  const double dt = 1.0 / ep.control_rate;
  for (int64_t k = 0; k < ep.samples; ++k) {
    out << k << "," << k * dt;
    for (int a = 0; a < arms; ++a) {
      for (int j = 0; j < ep.joint_count; ++j) {
        for (int f = 0; f < 3; ++f) out << "," << ep.value(true, k, a, j, f);
        for (int f = 0; f < 3; ++f) out << "," << ep.value(false, k, a, j, f);
      }
    }
    out << "\n";
  }
}

}  // namespace bilat
