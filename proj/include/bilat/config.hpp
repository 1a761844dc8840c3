#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "bilat/episode.hpp"
#include "bilat/eval.hpp"
#include "bilat/policy.hpp"
#include "bilat/recorder.hpp"
#include "bilat/runtime.hpp"

namespace bilat {

// Per-instruction expert targets; the motion schedule itself is derived from
// the task geometry and the session duration.
struct ExpertTargets {
  double torque_target = 0.05;  // grip threshold (N m)
  double twist = 0.0;           // sponge wrist amplitude per arm (rad)
};

struct ScriptConfig {
  double duration = 8.0;  // s, also the episode length
  double pose_jitter = 0.01;
  double torque_jitter_frac = 0.08;
  double time_jitter = 0.05;
  double grip_close_rate = 0.35;  // rad/s
  double grip_open_rate = 0.8;
};

struct EvaluationConfig {
  ForceBands bands;
  int bins = 40;
  int arm = 0;  // which follower gripper the histograms use
};

struct PathsConfig {
  std::string demos = "demos";
  std::string augmented = "aug";
  std::string checkpoint = "model.blatm";
  std::string train_log = "train_log.csv";
  std::string rollouts = "rollouts";
  std::string report = "report.json";
};

// The single JSON document driving every pipeline stage. Files are sparse:
// anything omitted falls back to the task defaults.
struct RunConfig {
  TaskKind task = TaskKind::cup;
  uint64_t seed = 1;
  int joint_count = 5;
  int follower_arms = 1;
  int control_rate = 1000;
  int image_rate = 100;
  std::vector<JointParams> plant;
  ControllerGains gains;
  ObserverConfig observers;
  HandModel hand;
  TaskGeometry geometry;
  CameraConfig cameras;
  ContactObject contact;
  SpongeCoupling coupling;
  std::map<std::string, ExpertTargets> experts;  // by normalized instruction
  ScriptConfig script;
  PromptTemplate prompt;
  EncoderConfig encoder;
  DabiConfig dabi;
  PolicyConfig policy;
  TrainSettings training;
  RolloutConfig rollout;  // instruction/seed filled per invocation
  EvaluationConfig evaluation;
  PathsConfig paths;

  static RunConfig defaults(TaskKind task);
  void validate() const;
  nlohmann::json to_json() const;
};

// Parse a config document over the task defaults ("task" decides which).
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Dotted-path override, e.g. "training.epochs" = "120" or "seed" = "7".
void apply_override(nlohmann::json& doc, const std::string& dotted_key,
                    const std::string& json_value);

SessionConfig session_config(const RunConfig& cfg);
LanguageEncoder make_encoder(const RunConfig& cfg);
ExpertScript build_expert_script(const RunConfig& cfg,
                                 const std::string& normalized_instruction);

}  // namespace bilat
