#include "bilat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace bilat {

void validate_bands(const ForceBands& bands) {
  for (const auto& [instr, b] : bands) {
    if (!(b.angle.lo < b.angle.hi) || !(b.torque.lo < b.torque.hi)) {
      throw ConfigError("force band for \"" + instr + "\": lo must be < hi");
    }
  }
  // the two instructions of a task must have disjoint torque bands
  for (auto a = bands.begin(); a != bands.end(); ++a) {
    for (auto b = std::next(a); b != bands.end(); ++b) {
      const auto& ta = a->second.torque;
      const auto& tb = b->second.torque;
      if (std::max(ta.lo, tb.lo) < std::min(ta.hi, tb.hi)) {
        throw ConfigError("torque bands for \"" + a->first + "\" and \"" + b->first +
                          "\" overlap");
      }
    }
  }
}

SceneLog scene_log_from_annotations(const nlohmann::json& annotations) {
  SceneLog log;
  if (!annotations.contains("scene_log")) {
    throw FormatError("episode annotations carry no scene log");
  }
  const auto& j = annotations.at("scene_log");
  log.crushed = j.value("crushed", false);
  log.slipped = j.value("slipped", false);
  log.grasp_time = j.value("grasp_time", -1.0);
  log.release_time = j.value("release_time", -1.0);
  for (const auto& e : j.value("events", nlohmann::json::array())) {
    log.events.push_back({e.at("time").get<double>(), e.at("name").get<std::string>()});
  }
  return log;
}

namespace {

TaskOutcome finish_outcome(TaskOutcome out, const SceneLog& log) {
  out.crushed = log.crushed;
  out.slipped = log.slipped;
  out.overall = true;
  for (const auto& s : out.stages) out.overall = out.overall && s.ok;
  return out;
}

nlohmann::json window_stats(const Episode& ep, const ChannelRef& ch, double t0,
                            double t1) {
  nlohmann::json stats = nlohmann::json::object();
  const int64_t a = std::max<int64_t>(0, std::llround(t0 * ep.control_rate));
  const int64_t b = std::min<int64_t>(ep.samples, std::llround(t1 * ep.control_rate));
  if (a >= b) return stats;
  double lo = 1e300, hi = -1e300, sum = 0.0;
  for (int64_t t = a; t < b; ++t) {
    const double v = ep.value(ch.follower, t, ch.arm, ch.joint, ch.field);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  stats["min"] = lo;
  stats["max"] = hi;
  stats["mean"] = sum / static_cast<double>(b - a);
  stats["ticks"] = b - a;
  return stats;
}

}  // namespace

TaskOutcome detect_cup_outcome(const Episode& episode, const SceneLog& log) {
  if (log.events.empty() && log.grasp_time < 0.0) {
    // a log with no events at all is fine; a missing one is caught earlier
  }
  TaskOutcome out;
  out.stages.push_back({"Pick", log.has("pick")});
  out.stages.push_back({"Move", log.has("pick") && log.has("move_apex")});
  out.stages.push_back({"Place", log.has("place")});
  out = finish_outcome(std::move(out), log);
  if (log.grasp_time >= 0.0) {
    const double end = log.release_time >= 0.0
                           ? log.release_time
                           : episode.samples / static_cast<double>(episode.control_rate);
    ChannelRef grip;
    grip.joint = episode.joint_count - 1;
    out.joint_stats["gripper_torque"] = window_stats(episode, grip, log.grasp_time, end);
  }
  return out;
}

TaskOutcome detect_sponge_outcome(const Episode& episode, const SceneLog& log) {
  if (episode.arm_count != 4) {
    throw std::invalid_argument("detect_sponge_outcome: bimanual episode required");
  }
  TaskOutcome out;
  out.stages.push_back({"Grab", log.has("grab")});
  out.stages.push_back({"Lift", log.has("grab") && log.has("lift")});
  out.stages.push_back({"Twist", log.has("twist_goal") && !log.slipped});
  out = finish_outcome(std::move(out), log);
  if (log.grasp_time >= 0.0) {
    const double end = episode.samples / static_cast<double>(episode.control_rate);
    for (int arm = 0; arm < 2; ++arm) {
      ChannelRef grip;
      grip.arm = arm;
      grip.joint = episode.joint_count - 1;
      out.joint_stats["gripper_torque_arm" + std::to_string(arm)] =
          window_stats(episode, grip, log.grasp_time, end);
    }
  }
  return out;
}

std::string ChannelRef::id() const {
  return std::string(follower ? "follower" : "leader") + ".arm" + std::to_string(arm) +
         ".joint" + std::to_string(joint) +
         (field == 0 ? ".angle" : field == 1 ? ".velocity" : ".torque");
}

int64_t Histogram::total() const {
  int64_t t = 0;
  for (int64_t c : counts) t += c;
  return t;
}

Histogram grip_histogram(const Episode& episode, const ChannelRef& channel, double t0,
                         double t1, int bins, BandRange range) {
  if (bins < 2) throw std::invalid_argument("grip_histogram: bins must be >= 2");
  if (!(range.lo < range.hi)) throw std::invalid_argument("grip_histogram: empty range");
  const int64_t a = std::max<int64_t>(0, std::llround(t0 * episode.control_rate));
  const int64_t b =
      std::min<int64_t>(episode.samples, std::llround(t1 * episode.control_rate));
  if (a >= b) throw std::invalid_argument("grip_histogram: empty window");

  Histogram h;
  h.channel_id = channel.id();
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i) {
    h.edges[i] = range.lo + (range.hi - range.lo) * i / bins;
  }
  for (int64_t t = a; t < b; ++t) {
    const double v =
        episode.value(channel.follower, t, channel.arm, channel.joint, channel.field);
    int bin = static_cast<int>((v - range.lo) / (range.hi - range.lo) * bins);
    bin = std::clamp(bin, 0, bins - 1);  // clamp outliers into the edge bins
    ++h.counts[bin];
  }
  h.mass.resize(bins);
  const double total = static_cast<double>(h.total());
  for (int i = 0; i < bins; ++i) h.mass[i] = h.counts[i] / total;
  return h;
}

double overlap_coefficient(const Histogram& h1, const Histogram& h2) {
  if (h1.edges != h2.edges) {
    throw std::invalid_argument("overlap_coefficient: bin edges differ");
  }
  double o = 0.0;
  for (size_t i = 0; i < h1.mass.size(); ++i) o += std::min(h1.mass[i], h2.mass[i]);
  return o;
}

double band_coverage(const Episode& episode, const ChannelRef& channel, double t0,
                     double t1, BandRange band) {
  const int64_t a = std::max<int64_t>(0, std::llround(t0 * episode.control_rate));
  const int64_t b =
      std::min<int64_t>(episode.samples, std::llround(t1 * episode.control_rate));
  if (a >= b) throw std::invalid_argument("band_coverage: empty hold window");
  int64_t inside = 0;
  for (int64_t t = a; t < b; ++t) {
    const double v =
        episode.value(channel.follower, t, channel.arm, channel.joint, channel.field);
    if (v >= band.lo && v <= band.hi) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(b - a);
}

const char* to_string(ForceRating r) {
  switch (r) {
    case ForceRating::circle: return "circle";
    case ForceRating::triangle: return "triangle";
    case ForceRating::cross: return "cross";
  }
  return "?";
}

namespace {

std::pair<double, double> episode_window(const Episode& ep, const InstructionBand& band) {
  double t0 = band.window_start;
  double t1 = band.window_end;
  if (t0 < 0.0) {
    const auto hw = ep.annotations.value("hold_window", nlohmann::json::array());
    if (hw.size() == 2) {
      t0 = hw[0].get<double>();
      t1 = hw[1].get<double>();
    }
  }
  const double end = ep.samples / static_cast<double>(ep.control_rate);
  if (t0 < 0.0) throw std::invalid_argument("episode has no hold window to evaluate");
  if (t1 < 0.0) t1 = end;
  return {t0, std::min(t1, end)};
}

}  // namespace

ForceAccuracyReport force_accuracy(
    const std::map<std::string, std::vector<const ScoredRollout*>>& by_instruction,
    const ForceBands& bands, const ChannelRef& channel, int bins) {
  if (by_instruction.empty()) throw std::invalid_argument("force_accuracy: no rollouts");
  validate_bands(bands);

  // shared edges wide enough for every band
  double lo = 1e300, hi = -1e300;
  for (const auto& [instr, band] : bands) {
    lo = std::min(lo, band.torque.lo);
    hi = std::max(hi, band.torque.hi);
  }
  const double pad = 0.25 * (hi - lo);
  BandRange range{lo - pad, hi + pad};

  ForceAccuracyReport report;
  std::map<std::string, std::pair<double, double>> extrema;  // min/max per instruction
  for (const auto& [instr, rollouts] : by_instruction) {
    const auto bit = bands.find(instr);
    if (bit == bands.end()) {
      throw std::invalid_argument("no force band configured for \"" + instr + "\"");
    }
    if (rollouts.empty()) {
      throw std::invalid_argument("force_accuracy: no rollouts for \"" + instr + "\"");
    }
    double score = 0.0;
    Histogram agg;
    double mn = 1e300, mx = -1e300;
    for (const ScoredRollout* r : rollouts) {
      const auto [t0, t1] = episode_window(r->episode, bit->second);
      score += band_coverage(r->episode, channel, t0, t1, bit->second.torque);
      Histogram h = grip_histogram(r->episode, channel, t0, t1, bins, range);
      if (agg.counts.empty()) {
        agg = h;
      } else {
        for (int i = 0; i < agg.bins(); ++i) agg.counts[i] += h.counts[i];
      }
      const auto stats = window_stats(r->episode, channel, t0, t1);
      mn = std::min(mn, stats.at("min").get<double>());
      mx = std::max(mx, stats.at("max").get<double>());
    }
    const double total = static_cast<double>(agg.total());
    for (int i = 0; i < agg.bins(); ++i) agg.mass[i] = agg.counts[i] / total;
    report.score[instr] = score / static_cast<double>(rollouts.size());
    report.histograms[instr] = std::move(agg);
    extrema[instr] = {mn, mx};
  }

  if (report.histograms.size() == 2) {
    auto it = report.histograms.begin();
    const Histogram& h1 = it->second;
    const Histogram& h2 = std::next(it)->second;
    report.cross_overlap = overlap_coefficient(h1, h2);
  } else {
    report.cross_overlap = 0.0;
  }

  bool all_covered = true;
  for (const auto& [instr, s] : report.score) all_covered = all_covered && s >= 0.9;

  if (all_covered && report.cross_overlap < 0.2) {
    report.rating = ForceRating::circle;
  } else if (report.score.size() == 2) {
    // triangle: the extrema still separate across the midpoint of the gap
    auto a = bands.find(report.score.begin()->first);
    auto b = bands.find(std::next(report.score.begin())->first);
    const bool a_is_low = a->second.torque.hi <= b->second.torque.lo;
    const auto& low = a_is_low ? a->second.torque : b->second.torque;
    const auto& high = a_is_low ? b->second.torque : a->second.torque;
    const std::string low_instr = a_is_low ? a->first : b->first;
    const std::string high_instr = a_is_low ? b->first : a->first;
    const double midpoint = 0.5 * (low.hi + high.lo);
    const bool separated = extrema.at(low_instr).second < midpoint &&
                           extrema.at(high_instr).first > midpoint;
    report.rating = separated ? ForceRating::triangle : ForceRating::cross;
  } else {
    report.rating = ForceRating::cross;
  }
  return report;
}

namespace {

nlohmann::json histogram_json(const Histogram& h) {
  return {{"channel", h.channel_id},
          {"edges", h.edges},
          {"counts", h.counts},
          {"mass", h.mass}};
}

std::string slugify(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

}  // namespace

void write_report(const std::map<std::string, std::vector<ScoredRollout>>& rollouts,
                  const ForceAccuracyReport& accuracy, const std::string& task,
                  const std::filesystem::path& report_path) {
  nlohmann::json report;
  report["task"] = task;
  report["rating"] = to_string(accuracy.rating);
  report["rating_symbol"] = accuracy.rating == ForceRating::circle     ? "o"
                            : accuracy.rating == ForceRating::triangle ? "^"
                                                                       : "x";
  report["cross_overlap"] = accuracy.cross_overlap;
  report["rating_rule"] = {{"coverage_threshold", 0.9},
                           {"overlap_threshold", 0.2},
                           {"note", "circle: coverage >= 0.9 for every instruction and "
                                    "overlap < 0.2; triangle: extrema separated across "
                                    "the band-gap midpoint; cross otherwise"}};

  nlohmann::json instructions = nlohmann::json::object();
  for (const auto& [instr, rolls] : rollouts) {
    nlohmann::json entry;
    entry["rollouts"] = rolls.size();
    int successes = 0;
    std::map<std::string, int> stage_counts;
    int crushed = 0, slipped = 0;
    for (const auto& r : rolls) {
      if (r.outcome.overall) ++successes;
      for (const auto& s : r.outcome.stages) stage_counts[s.name] += s.ok ? 1 : 0;
      crushed += r.outcome.crushed ? 1 : 0;
      slipped += r.outcome.slipped ? 1 : 0;
    }
    entry["successes"] = successes;
    entry["success_rate"] =
        std::to_string(successes) + "/" + std::to_string(rolls.size());
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& [name, n] : stage_counts) {
      stages[name] = std::to_string(n) + "/" + std::to_string(rolls.size());
    }
    entry["stages"] = stages;
    entry["crushed"] = crushed;
    entry["slipped"] = slipped;
    if (accuracy.score.count(instr)) {
      entry["force_accuracy_score"] = accuracy.score.at(instr);
      entry["histogram"] = histogram_json(accuracy.histograms.at(instr));
    }
    instructions[instr] = entry;
  }
  report["instructions"] = instructions;

  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + report_path.string());
  out << report.dump(2) << "\n";

  // companion CSVs: per-tick gripper series per rollout + the histograms
  const std::filesystem::path dir = report_path.parent_path();
  const std::string stem = report_path.stem().string();
  for (const auto& [instr, rolls] : rollouts) {
    for (size_t i = 0; i < rolls.size(); ++i) {
      const Episode& ep = rolls[i].episode;
      std::ofstream csv(dir / (stem + "_" + slugify(instr) + "_roll" +
                               std::to_string(i) + ".csv"),
                        std::ios::trunc);
      csv << "time";
      for (int a = 0; a < ep.leader_arms(); ++a) {
        csv << ",gripper_angle_arm" << a << ",gripper_torque_arm" << a;
      }
      csv << "\n";
      csv.precision(10);
      const int gj = ep.joint_count - 1;
      for (int64_t t = 0; t < ep.samples; ++t) {
        csv << t / static_cast<double>(ep.control_rate);
        for (int a = 0; a < ep.leader_arms(); ++a) {
          csv << "," << ep.value(false, t, a, gj, 0) << ","
              << ep.value(false, t, a, gj, 2);
        }
        csv << "\n";
      }
    }
  }
  std::ofstream hist_csv(dir / (stem + "_hist.csv"), std::ios::trunc);
  hist_csv << "bin_lo,bin_hi";
  for (const auto& [instr, h] : accuracy.histograms) hist_csv << "," << slugify(instr);
  hist_csv << "\n";
  hist_csv.precision(10);
  if (!accuracy.histograms.empty()) {
    const int bins = accuracy.histograms.begin()->second.bins();
    for (int i = 0; i < bins; ++i) {
      const auto& edges = accuracy.histograms.begin()->second.edges;
      hist_csv << edges[i] << "," << edges[i + 1];
      for (const auto& [instr, h] : accuracy.histograms) hist_csv << "," << h.mass[i];
      hist_csv << "\n";
    }
  }
}

nlohmann::json read_report(const std::filesystem::path& report_path) {
  std::ifstream in(report_path);
  if (!in) throw FormatError("cannot open report: " + report_path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
}

}  // namespace bilat
