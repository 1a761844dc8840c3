#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "bilat/policy.hpp"
#include "bilat/recorder.hpp"

namespace bilat {

// Ring of pending action chunks with exponentially decaying weights by age.
struct EnsembleState {
  struct PendingChunk {
    int64_t issue_tick = 0;  // policy ticks
    Matrix actions;          // [K, action_dim], de-normalized
  };

  std::deque<PendingChunk> chunks;
  double decay = 0.01;  // m, per policy tick
  int capacity = 1;     // >= chunk_size keeps every overlapping chunk
  bool enabled = true;

  std::vector<double> last_target;
  int64_t gap_count = 0;

  void push(int64_t issue_tick, Matrix actions);
};

// Weighted average over all chunks covering this policy tick
// (weights exp(-m * age)). Falls back to the last target and counts a gap
// when nothing covers the tick.
std::vector<double> temporal_ensemble(EnsembleState& state, int64_t tick);

// Linear interpolation for angle/velocity channels, zero-order hold for
// torque channels. Layout: per arm, per joint, (angle, velocity, torque).
std::vector<double> interpolate_to_control_rate(const std::vector<double>& prev,
                                                const std::vector<double>& next,
                                                double phase, int joint_count,
                                                int arms);

struct RolloutConfig {
  double duration = 10.0;  // s
  int policy_rate = 100;   // Hz
  int control_rate = 1000; // Hz
  std::string instruction;
  uint64_t seed = 0;
  bool ensembling = true;
  double ensemble_decay = 0.01;
  int replan_interval = 1;      // policy ticks between queries
  bool async_inference = false; // one-query-delay mailbox

  void validate() const;
};

// One control tick of the follower under the 4ch law with the predicted
// leader triple substituted for measured leader state.
struct AutonomousTick {
  std::vector<double> command;
  std::vector<uint8_t> saturated;
  std::vector<double> tau_ext_hat;  // follower RFOB after the tick
};

AutonomousTick autonomous_tick(ArmState& follower, ObserverState& observer,
                               const ControllerGains& gains, const ObserverConfig& ocfg,
                               std::span<const JointParams> plant,
                               std::span<const double> leader_target,
                               std::span<const double> env_torque, double dt);

struct RolloutResult {
  Episode episode;  // leader stream = predicted targets
  SceneLog log;
  double mean_command_delta = 0.0;  // mean |d tau_cmd| per tick, smoothness
  int64_t ensemble_gaps = 0;
  int64_t saturation_ticks = 0;
};

// Full closed loop: render at the image rate, embed the instruction once,
// infer chunks, ensemble, interpolate, tick the plant at the control rate.
RolloutResult run_rollout(const ModelParams& params, const SessionConfig& session,
                          const RolloutConfig& rollout, const LanguageEncoder& encoder);

// Telemetry CSV: tick, time, per-joint targets, commands, estimates, flags.
void write_rollout_telemetry(const RolloutResult& result,
                             const std::filesystem::path& csv_path);

}  // namespace bilat
