// Command-line front end for the pipeline; links the C API only.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bilat/bilat.h"

namespace {

struct CtxDeleter {
  void operator()(bilat_ctx* c) const { bilat_ctx_free(c); }
};
using CtxPtr = std::unique_ptr<bilat_ctx, CtxDeleter>;

int report(bilat_ctx* ctx, int code) {
  if (code != BILAT_OK) {
    std::fprintf(stderr, "error: %s\n", bilat_last_error(ctx));
  }
  return code;
}

int load_config(bilat_ctx* ctx, const std::string& config_path,
                const std::vector<std::string>& overrides, long long seed,
                bool seed_set) {
  int rc = config_path.empty() ? bilat_config_load_default(ctx, "cup")
                               : bilat_config_load(ctx, config_path.c_str());
  if (rc != BILAT_OK) return report(ctx, rc);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return BILAT_ERR_USAGE;
    }
    rc = bilat_config_override(ctx, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (rc != BILAT_OK) return report(ctx, rc);
  }
  if (seed_set) {
    rc = bilat_config_override(ctx, "seed", std::to_string(seed).c_str());
    if (rc != BILAT_OK) return report(ctx, rc);
  }
  return BILAT_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilateral-control imitation learning pipeline"};
  app.set_version_flag("--version", bilat_version());
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = 0;
  bool seed_set = false;
  app.add_option("--config,-c", config_path, "run configuration JSON");
  app.add_option("--set", overrides, "override a config key, e.g. --set training.epochs=50")
      ->take_all();
  app.add_option("--seed", seed, "override the global seed")
      ->each([&](const std::string&) { seed_set = true; });

  // collect
  auto* collect = app.add_subcommand("collect", "record demonstrations");
  std::string instruction, out_dir = "demos";
  int episodes = 3;
  collect->add_option("--instruction", instruction, "natural-language instruction")
      ->required();
  collect->add_option("--episodes", episodes, "demonstrations to record");
  collect->add_option("--out", out_dir, "output directory");

  // augment
  auto* augment = app.add_subcommand("augment", "DABI downsampling augmentation");
  std::string aug_in, aug_out = "aug";
  int factor = 0;
  augment->add_option("--in", aug_in, "episode directory or manifest")->required();
  augment->add_option("--factor", factor, "downsampling factor (default: from config)");
  augment->add_option("--out", aug_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train the policy");
  std::string data, checkpoint = "model.blatm", log_csv = "train_log.csv";
  train->add_option("--data", data, "episode directory or manifest")->required();
  train->add_option("--out", checkpoint, "checkpoint path");
  train->add_option("--log", log_csv, "training log CSV");

  // rollout
  auto* rollout = app.add_subcommand("rollout", "autonomous execution");
  std::string roll_ckpt, roll_instruction, roll_out = "rollouts";
  int count = 5;
  rollout->add_option("--checkpoint", roll_ckpt, "trained checkpoint")->required();
  rollout->add_option("--instruction", roll_instruction, "instruction to execute")
      ->required();
  rollout->add_option("--count", count, "rollouts to run");
  rollout->add_option("--out", roll_out, "output directory");

  // eval
  auto* eval = app.add_subcommand("eval", "score rollouts and write the report");
  std::string rollouts_dir, report_path = "report.json";
  eval->add_option("--rollouts", rollouts_dir, "rollout directory or manifest")
      ->required();
  eval->add_option("--report", report_path, "report JSON path");

  // plotdata
  auto* plotdata = app.add_subcommand("plotdata", "per-tick CSVs for plotting");
  std::string episode_path, prefix = "plot";
  plotdata->add_option("--episode", episode_path, "episode file")->required();
  plotdata->add_option("--out", prefix, "output prefix");

  // validate
  auto* validate = app.add_subcommand("validate", "check config and artifacts");
  std::vector<std::string> files;
  validate->add_option("files", files, "artifacts to validate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : BILAT_ERR_USAGE;
  }

  CtxPtr ctx(bilat_ctx_new());
  int rc = load_config(ctx.get(), config_path, overrides, seed, seed_set);
  if (rc != BILAT_OK) return rc;

  if (collect->parsed()) {
    return report(ctx.get(), bilat_collect(ctx.get(), instruction.c_str(), episodes,
                                           out_dir.c_str()));
  }
  if (augment->parsed()) {
    return report(ctx.get(),
                  bilat_augment(ctx.get(), aug_in.c_str(), factor, aug_out.c_str()));
  }
  if (train->parsed()) {
    return report(ctx.get(), bilat_train(ctx.get(), data.c_str(), checkpoint.c_str(),
                                         log_csv.c_str()));
  }
  if (rollout->parsed()) {
    return report(ctx.get(), bilat_rollout(ctx.get(), roll_ckpt.c_str(),
                                           roll_instruction.c_str(), count,
                                           roll_out.c_str()));
  }
  if (eval->parsed()) {
    return report(ctx.get(),
                  bilat_eval(ctx.get(), rollouts_dir.c_str(), report_path.c_str()));
  }
  if (plotdata->parsed()) {
    return report(ctx.get(),
                  bilat_plotdata(ctx.get(), episode_path.c_str(), prefix.c_str()));
  }
  if (validate->parsed()) {
    rc = report(ctx.get(), bilat_config_validate(ctx.get()));
    if (rc != BILAT_OK) return rc;
    for (const auto& f : files) {
      rc = bilat_validate_file(ctx.get(), f.c_str());
      if (rc != BILAT_OK) {
        std::fprintf(stderr, "invalid: %s (%s)\n", f.c_str(), bilat_last_error(ctx.get()));
        return rc;
      }
      std::fprintf(stderr, "[validate] ok: %s\n", f.c_str());
    }
    return 0;
  }
  return BILAT_ERR_USAGE;
}
