#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bilat/config.hpp"

namespace bilat {

// In-memory pipeline pieces (the file-based stages below and the test
// harnesses share these).
std::vector<Episode> collect_episodes(const RunConfig& cfg,
                                      const std::string& instruction, int count);
std::vector<Episode> augment_episodes(const RunConfig& cfg,
                                      const std::vector<Episode>& episodes);
TrainResult train_on_episodes(const RunConfig& cfg, std::vector<Episode> episodes);
RolloutResult rollout_once(const RunConfig& cfg, const ModelParams& params,
                           const std::string& instruction, uint64_t seed);
ScoredRollout score_rollout(const RunConfig& cfg, RolloutResult result);

// File-based stages behind the CLI. Every stage prints progress lines on
// stderr and embeds the effective config in its artifacts.
std::vector<std::filesystem::path> collect_stage(const RunConfig& cfg,
                                                 const std::string& instruction,
                                                 int count,
                                                 const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> augment_stage(const RunConfig& cfg,
                                                 const std::filesystem::path& input,
                                                 int factor,
                                                 const std::filesystem::path& out_dir);
void train_stage(const RunConfig& cfg, const std::filesystem::path& data,
                 const std::filesystem::path& checkpoint_out,
                 const std::filesystem::path& log_csv);
std::vector<std::filesystem::path> rollout_stage(const RunConfig& cfg,
                                                 const std::filesystem::path& checkpoint,
                                                 const std::string& instruction,
                                                 int count,
                                                 const std::filesystem::path& out_dir);
nlohmann::json eval_stage(const RunConfig& cfg, const std::filesystem::path& rollouts,
                          const std::filesystem::path& report_path);
void plotdata_stage(const RunConfig& cfg, const std::filesystem::path& episode_path,
                    const std::filesystem::path& out_prefix);

// Structural validation of any artifact this project emits, dispatched on
// the file magic/extension. Throws FormatError with a reason.
void validate_file(const std::filesystem::path& path);

}  // namespace bilat
