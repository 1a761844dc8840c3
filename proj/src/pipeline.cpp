#include "bilat/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

namespace bilat {

namespace fs = std::filesystem;

namespace {

std::string slugify(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

uint64_t episode_seed(const RunConfig& cfg, const std::string& instruction, int index) {
  return hash_combine(hash_string(instruction, cfg.seed), static_cast<uint64_t>(index));
}

}  // namespace

std::vector<Episode> collect_episodes(const RunConfig& cfg,
                                      const std::string& instruction, int count) {
  cfg.validate();
  const LanguageEncoder encoder = make_encoder(cfg);
  const std::string normalized = encoder.normalize(instruction);
  const ExpertScript script = build_expert_script(cfg, normalized);
  const SessionConfig session = session_config(cfg);

  std::vector<Episode> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    SessionResult r = record_session(session, script, instruction, normalized,
                                     cfg.script.duration,
                                     episode_seed(cfg, normalized, i));
    if (r.log.crushed || r.log.slipped) {
      std::cerr << "[collect] warning: demonstration " << i
                << (r.log.crushed ? " crushed the object" : " slipped") << "\n";
    }
    out.push_back(std::move(r.episode));
  }
  return out;
}

std::vector<Episode> augment_episodes(const RunConfig& cfg,
                                      const std::vector<Episode>& episodes) {
  std::vector<Episode> out;
  for (const auto& ep : episodes) {
    auto augmented = dabi_augment(ep, cfg.dabi);
    for (auto& a : augmented) out.push_back(std::move(a));
  }
  return out;
}

TrainResult train_on_episodes(const RunConfig& cfg, std::vector<Episode> episodes) {
  const LanguageEncoder encoder = make_encoder(cfg);
  Dataset ds = build_dataset(std::move(episodes), encoder, cfg.policy);
  return train(ds, cfg.policy, cfg.training, cfg.seed);
}

RolloutResult rollout_once(const RunConfig& cfg, const ModelParams& params,
                           const std::string& instruction, uint64_t seed) {
  RolloutConfig rc = cfg.rollout;
  rc.instruction = instruction;
  rc.seed = seed;
  rc.policy_rate = cfg.image_rate;
  rc.control_rate = cfg.control_rate;
  const LanguageEncoder encoder = make_encoder(cfg);
  return run_rollout(params, session_config(cfg), rc, encoder);
}

ScoredRollout score_rollout(const RunConfig& cfg, RolloutResult result) {
  ScoredRollout scored;
  scored.log = result.log;
  scored.outcome = cfg.task == TaskKind::cup
                       ? detect_cup_outcome(result.episode, result.log)
                       : detect_sponge_outcome(result.episode, result.log);
  scored.episode = std::move(result.episode);
  return scored;
}

// ---------------------------------------------------------------------------
// file-based stages

std::vector<fs::path> collect_stage(const RunConfig& cfg, const std::string& instruction,
                                    int count, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const LanguageEncoder encoder = make_encoder(cfg);
  const std::string slug = slugify(encoder.normalize(instruction));
  std::vector<Episode> episodes = collect_episodes(cfg, instruction, count);

  std::vector<fs::path> written;
  const nlohmann::json provenance = cfg.to_json();
  for (size_t i = 0; i < episodes.size(); ++i) {
    episodes[i].annotations["config"] = provenance;
    char name[64];
    std::snprintf(name, sizeof(name), "ep_%s_%03zu.blat", slug.c_str(), i);
    const fs::path p = out_dir / name;
    write_episode(episodes[i], p);
    std::cerr << "[collect] wrote " << p.string() << "\n";
    written.push_back(p);
  }
  // extend an existing manifest so soft and strong demos can share a dataset
  std::vector<fs::path> manifest_entries;
  const fs::path manifest = out_dir / "manifest.txt";
  if (fs::exists(manifest)) manifest_entries = read_manifest(manifest);
  for (const auto& p : written) manifest_entries.push_back(p);
  std::sort(manifest_entries.begin(), manifest_entries.end());
  manifest_entries.erase(std::unique(manifest_entries.begin(), manifest_entries.end()),
                         manifest_entries.end());
  std::vector<fs::path> relative;
  for (const auto& p : manifest_entries) relative.push_back(p.filename());
  write_manifest(manifest, relative);
  return written;
}

std::vector<fs::path> augment_stage(const RunConfig& cfg, const fs::path& input,
                                    int factor, const fs::path& out_dir) {
  DabiConfig dabi = cfg.dabi;
  if (factor > 0) {
    dabi.source_rate = cfg.control_rate;
    dabi.target_rate = cfg.control_rate / factor;
    if (cfg.control_rate % factor != 0) {
      throw ConfigError("augment: control rate is not divisible by the factor");
    }
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  std::vector<fs::path> sources = list_episodes(input);
  if (sources.empty()) throw ConfigError("augment: no episodes found in " + input.string());
  for (const auto& src : sources) {
    const Episode ep = read_episode(src);
    const auto augmented = dabi_augment(ep, dabi);
    for (size_t o = 0; o < augmented.size(); ++o) {
      char name[96];
      std::snprintf(name, sizeof(name), "%s_off%02zu.blat", src.stem().string().c_str(),
                    o);
      const fs::path p = out_dir / name;
      write_episode(augmented[o], p);
      written.push_back(p);
    }
    std::cerr << "[augment] " << src.filename().string() << " -> " << augmented.size()
              << " episodes\n";
  }
  std::vector<fs::path> relative;
  for (const auto& p : written) relative.push_back(p.filename());
  std::sort(relative.begin(), relative.end());
  write_manifest(out_dir / "manifest.txt", relative);
  return written;
}

void train_stage(const RunConfig& cfg, const fs::path& data,
                 const fs::path& checkpoint_out, const fs::path& log_csv) {
  std::vector<Episode> episodes;
  for (const auto& p : list_episodes(data)) episodes.push_back(read_episode(p));
  if (episodes.empty()) throw ConfigError("train: no episodes found in " + data.string());
  std::cerr << "[train] " << episodes.size() << " episodes, "
            << cfg.training.epochs << " epochs\n";
  TrainResult result = train_on_episodes(cfg, std::move(episodes));
  if (!checkpoint_out.parent_path().empty()) {
    fs::create_directories(checkpoint_out.parent_path());
  }
  save_checkpoint(result.params, checkpoint_out);
  if (!log_csv.empty()) write_train_log(result.log, log_csv);
  std::cerr << "[train] final recon " << result.log.back().recon << ", wrote "
            << checkpoint_out.string() << "\n";
}

std::vector<fs::path> rollout_stage(const RunConfig& cfg, const fs::path& checkpoint,
                                    const std::string& instruction, int count,
                                    const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const ModelParams params = load_checkpoint(checkpoint);
  const LanguageEncoder encoder = make_encoder(cfg);
  const std::string slug = slugify(encoder.normalize(instruction));
  const nlohmann::json provenance = cfg.to_json();

  std::vector<fs::path> written;
  for (int i = 0; i < count; ++i) {
    RolloutResult r = rollout_once(cfg, params, instruction,
                                   episode_seed(cfg, "rollout:" + instruction, i));
    r.episode.annotations["config"] = provenance;
    char name[96];
    std::snprintf(name, sizeof(name), "roll_%s_%03d.blat", slug.c_str(), i);
    const fs::path p = out_dir / name;
    write_episode(r.episode, p);
    write_rollout_telemetry(r, out_dir / (p.stem().string() + "_telemetry.csv"));
    std::cerr << "[rollout] wrote " << p.string() << "\n";
    written.push_back(p);
  }
  std::vector<fs::path> manifest_entries;
  const fs::path manifest = out_dir / "manifest.txt";
  if (fs::exists(manifest)) manifest_entries = read_manifest(manifest);
  for (const auto& p : written) manifest_entries.push_back(p);
  std::sort(manifest_entries.begin(), manifest_entries.end());
  manifest_entries.erase(std::unique(manifest_entries.begin(), manifest_entries.end()),
                         manifest_entries.end());
  std::vector<fs::path> relative;
  for (const auto& p : manifest_entries) relative.push_back(p.filename());
  write_manifest(manifest, relative);
  return written;
}

nlohmann::json eval_stage(const RunConfig& cfg, const fs::path& rollouts,
                          const fs::path& report_path) {
  std::map<std::string, std::vector<ScoredRollout>> grouped;
  for (const auto& p : list_episodes(rollouts)) {
    Episode ep = read_episode(p);
    ScoredRollout scored;
    scored.log = scene_log_from_annotations(ep.annotations);
    scored.outcome = cfg.task == TaskKind::cup ? detect_cup_outcome(ep, scored.log)
                                               : detect_sponge_outcome(ep, scored.log);
    scored.episode = std::move(ep);
    grouped[scored.episode.instruction].push_back(std::move(scored));
  }
  if (grouped.empty()) throw ConfigError("eval: no rollouts found in " + rollouts.string());

  ChannelRef channel;
  channel.arm = cfg.evaluation.arm;
  channel.joint = cfg.joint_count - 1;
  channel.field = 2;
  std::map<std::string, std::vector<const ScoredRollout*>> views;
  for (const auto& [instr, rolls] : grouped) {
    for (const auto& r : rolls) views[instr].push_back(&r);
  }
  ForceAccuracyReport accuracy =
      force_accuracy(views, cfg.evaluation.bands, channel, cfg.evaluation.bins);
  if (!report_path.parent_path().empty()) {
    fs::create_directories(report_path.parent_path());
  }
  write_report(grouped, accuracy, to_string(cfg.task), report_path);
  std::cerr << "[eval] rating " << to_string(accuracy.rating) << ", overlap "
            << accuracy.cross_overlap << ", wrote " << report_path.string() << "\n";
  return read_report(report_path);
}

void plotdata_stage(const RunConfig& cfg, const fs::path& episode_path,
                    const fs::path& out_prefix) {
  const Episode ep = read_episode(episode_path);
  if (!out_prefix.parent_path().empty()) {
    fs::create_directories(out_prefix.parent_path());
  }

  // full per-tick series
  const fs::path series = out_prefix.string() + "_series.csv";
  std::ofstream out(series, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + series.string());
  out << "tick,time";
  for (int a = 0; a < ep.leader_arms(); ++a) {
    for (int j = 0; j < ep.joint_count; ++j) {
      for (const char* side : {"leader", "follower"}) {
        out << "," << side << "_angle_a" << a << "j" << j << "," << side << "_velocity_a"
            << a << "j" << j << "," << side << "_torque_a" << a << "j" << j;
      }
    }
  }
  out << "\n";
  out.precision(10);
  for (int64_t t = 0; t < ep.samples; ++t) {
    out << t << "," << t / static_cast<double>(ep.control_rate);
    for (int a = 0; a < ep.leader_arms(); ++a) {
      for (int j = 0; j < ep.joint_count; ++j) {
        for (int f = 0; f < 3; ++f) out << "," << ep.value(true, t, a, j, f);
        for (int f = 0; f < 3; ++f) out << "," << ep.value(false, t, a, j, f);
      }
    }
    out << "\n";
  }

  // gripper histogram over the hold window
  const auto hw = ep.annotations.value("hold_window", nlohmann::json::array());
  double t0 = 0.0, t1 = ep.samples / static_cast<double>(ep.control_rate);
  if (hw.size() == 2 && hw[0].get<double>() >= 0.0) {
    t0 = hw[0].get<double>();
    t1 = hw[1].get<double>();
  }
  ChannelRef channel;
  channel.arm = cfg.evaluation.arm;
  channel.joint = ep.joint_count - 1;
  double lo = 1e300, hi = -1e300;
  for (const auto& [instr, band] : cfg.evaluation.bands) {
    lo = std::min(lo, band.torque.lo);
    hi = std::max(hi, band.torque.hi);
  }
  const double pad = 0.25 * (hi - lo);
  Histogram h = grip_histogram(ep, channel, t0, t1, cfg.evaluation.bins,
                               {lo - pad, hi + pad});
  const fs::path hist = out_prefix.string() + "_hist.csv";
  std::ofstream hout(hist, std::ios::trunc);
  hout << "bin_lo,bin_hi,mass\n";
  hout.precision(10);
  for (int i = 0; i < h.bins(); ++i) {
    hout << h.edges[i] << "," << h.edges[i + 1] << "," << h.mass[i] << "\n";
  }
  std::cerr << "[plotdata] wrote " << series.string() << " and " << hist.string()
            << "\n";
}

void validate_file(const fs::path& path) {
  if (!fs::exists(path)) throw FormatError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  char magic[6] = {};
  in.read(magic, 6);
  if (in.gcount() >= 6 && std::string_view(magic, 5) == "BLAT1") {
    read_episode(path);  // full structural validation
    return;
  }
  if (in.gcount() >= 6 && std::string_view(magic, 6) == "BLATM1") {
    load_checkpoint(path);
    return;
  }
  const std::string ext = path.extension().string();
  if (ext == ".json") {
    const nlohmann::json j = read_report(path);
    if (j.contains("instructions") || j.contains("task")) return;
    parse_run_config(j);  // else it must be a config
    return;
  }
  if (ext == ".txt") {
    for (const auto& p : read_manifest(path)) {
      if (!fs::exists(p)) throw FormatError("manifest entry missing: " + p.string());
    }
    return;
  }
  if (ext == ".csv") {
    std::ifstream csv(path);
    std::string header;
    if (!std::getline(csv, header) || header.find(',') == std::string::npos) {
      throw FormatError("not a CSV artifact: " + path.string());
    }
    return;
  }
  throw FormatError("unrecognized artifact type: " + path.string());
}

}  // namespace bilat
