#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bilat/episode.hpp"
#include "bilat/sim.hpp"

namespace bilat {

struct BandRange {
  double lo = 0.0;
  double hi = 0.0;
};

// Reference bands for one instruction, derived from the scripted expert.
struct InstructionBand {
  BandRange angle;
  BandRange torque;
  double window_start = -1.0;  // s; < 0 means "use the episode hold window"
  double window_end = -1.0;    // s; < 0 means "until the end"
};

using ForceBands = std::map<std::string, InstructionBand>;  // by normalized instruction

void validate_bands(const ForceBands& bands);

struct StageResult {
  std::string name;
  bool ok = false;
};

struct TaskOutcome {
  std::vector<StageResult> stages;
  bool overall = false;
  bool crushed = false;
  bool slipped = false;
  double force_accuracy = -1.0;  // fraction of hold-window ticks in band
  nlohmann::json joint_stats = nlohmann::json::object();
};

// Stage detection for the cup task: Pick / Move / Place from the scene log.
TaskOutcome detect_cup_outcome(const Episode& episode, const SceneLog& log);

// Stage detection for the sponge task: Grab / Lift / Twist.
TaskOutcome detect_sponge_outcome(const Episode& episode, const SceneLog& log);

// Scene log parsed back out of an episode's annotations.
SceneLog scene_log_from_annotations(const nlohmann::json& annotations);

// Addressing one scalar stream inside an episode.
struct ChannelRef {
  bool follower = true;
  int arm = 0;
  int joint = 4;  // gripper by default
  int field = 2;  // 0 angle, 1 velocity, 2 torque

  std::string id() const;
};

struct Histogram {
  std::vector<double> edges;  // bins+1, uniform, strictly increasing
  std::vector<int64_t> counts;
  std::vector<double> mass;  // normalized to 1 when non-empty
  std::string channel_id;

  int bins() const { return static_cast<int>(counts.size()); }
  int64_t total() const;
};

// Probability-mass histogram of one channel over [t0, t1) seconds.
// Out-of-range values are clamped into the edge bins so the mass always
// sums to one.
Histogram grip_histogram(const Episode& episode, const ChannelRef& channel, double t0,
                         double t1, int bins, BandRange range);

// Sum over bins of min(mass1, mass2); requires identical edges.
double overlap_coefficient(const Histogram& h1, const Histogram& h2);

// Fraction of hold-window ticks with the grip torque inside [band.lo, band.hi].
double band_coverage(const Episode& episode, const ChannelRef& channel, double t0,
                     double t1, BandRange band);

enum class ForceRating { circle, triangle, cross };

const char* to_string(ForceRating r);

struct ForceAccuracyReport {
  std::map<std::string, double> score;  // per instruction
  double cross_overlap = 1.0;
  ForceRating rating = ForceRating::cross;
  std::map<std::string, Histogram> histograms;
};

struct ScoredRollout {
  Episode episode;
  SceneLog log;
  TaskOutcome outcome;
};

// Score = mean fraction of hold-window ticks inside the instruction's torque
// band. Rating: circle when both instructions score >= 0.9 with cross-overlap
// < 0.2; triangle when only the extrema separate across the band midpoint;
// cross otherwise.
ForceAccuracyReport force_accuracy(
    const std::map<std::string, std::vector<const ScoredRollout*>>& by_instruction,
    const ForceBands& bands, const ChannelRef& channel, int bins);

// JSON report (per-instruction success counts, scores, histograms) plus
// per-tick and histogram CSVs for external plotting.
void write_report(const std::map<std::string, std::vector<ScoredRollout>>& rollouts,
                  const ForceAccuracyReport& accuracy, const std::string& task,
                  const std::filesystem::path& report_path);

nlohmann::json read_report(const std::filesystem::path& report_path);

}  // namespace bilat
