#include "bilat/bilat.h"

#include <fstream>
#include <optional>
#include <string>

#include "bilat/pipeline.hpp"

using namespace bilat;

struct bilat_ctx {
  nlohmann::json doc = nlohmann::json::object();
  std::optional<RunConfig> config;
  std::string error;
  std::string dump;
};

struct bilat_episode {
  Episode episode;
};

namespace {

int fail(bilat_ctx* ctx, int code, const std::string& message) {
  if (ctx) ctx->error = message;
  return code;
}

// Exceptions map onto the exit-code contract: config problems are 2,
// everything else that went wrong while running is 3.
template <typename Fn>
int guarded(bilat_ctx* ctx, Fn&& fn) {
  if (!ctx) return BILAT_ERR_USAGE;
  try {
    fn();
    ctx->error.clear();
    return BILAT_OK;
  } catch (const ConfigError& e) {
    return fail(ctx, BILAT_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(ctx, BILAT_ERR_RUNTIME, e.what());
  }
}

const RunConfig& need_config(bilat_ctx* ctx) {
  if (!ctx->config) {
    throw ConfigError("no configuration loaded (call bilat_config_load first)");
  }
  return *ctx->config;
}

}  // namespace

extern "C" {

const char* bilat_version(void) { return "bilat 1.0.0"; }

bilat_ctx* bilat_ctx_new(void) { return new bilat_ctx(); }

void bilat_ctx_free(bilat_ctx* ctx) { delete ctx; }

const char* bilat_last_error(const bilat_ctx* ctx) {
  return ctx ? ctx->error.c_str() : "null context";
}

int bilat_config_load(bilat_ctx* ctx, const char* path) {
  if (!ctx || !path) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open config: ") + path);
    try {
      ctx->doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ctx->config = parse_run_config(ctx->doc);
  });
}

int bilat_config_load_default(bilat_ctx* ctx, const char* task) {
  if (!ctx || !task) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] {
    ctx->config = RunConfig::defaults(task_kind_from_string(task));
    ctx->doc = nlohmann::json{{"task", task}};
  });
}

int bilat_config_override(bilat_ctx* ctx, const char* dotted_key,
                          const char* json_value) {
  if (!ctx || !dotted_key || !json_value) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] {
    apply_override(ctx->doc, dotted_key, json_value);
    ctx->config = parse_run_config(ctx->doc);
  });
}

int bilat_config_validate(bilat_ctx* ctx) {
  if (!ctx) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] { need_config(ctx).validate(); });
}

const char* bilat_config_dump(bilat_ctx* ctx) {
  if (!ctx || !ctx->config) return "";
  ctx->dump = ctx->config->to_json().dump(2);
  return ctx->dump.c_str();
}

int bilat_collect(bilat_ctx* ctx, const char* instruction, int episodes,
                  const char* out_dir) {
  if (!ctx || !instruction || !out_dir) return BILAT_ERR_USAGE;
  if (episodes < 1) return fail(ctx, BILAT_ERR_USAGE, "episodes must be >= 1");
  return guarded(ctx, [&] {
    collect_stage(need_config(ctx), instruction, episodes, out_dir);
  });
}

int bilat_augment(bilat_ctx* ctx, const char* input, int factor, const char* out_dir) {
  if (!ctx || !input || !out_dir) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] {
    augment_stage(need_config(ctx), input, factor, out_dir);
  });
}

int bilat_train(bilat_ctx* ctx, const char* data, const char* checkpoint_out,
                const char* log_csv) {
  if (!ctx || !data || !checkpoint_out) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] {
    train_stage(need_config(ctx), data, checkpoint_out,
                log_csv ? std::filesystem::path(log_csv) : std::filesystem::path());
  });
}

int bilat_rollout(bilat_ctx* ctx, const char* checkpoint, const char* instruction,
                  int count, const char* out_dir) {
  if (!ctx || !checkpoint || !instruction || !out_dir) return BILAT_ERR_USAGE;
  if (count < 1) return fail(ctx, BILAT_ERR_USAGE, "count must be >= 1");
  return guarded(ctx, [&] {
    rollout_stage(need_config(ctx), checkpoint, instruction, count, out_dir);
  });
}

int bilat_eval(bilat_ctx* ctx, const char* rollouts, const char* report_path) {
  if (!ctx || !rollouts || !report_path) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] { eval_stage(need_config(ctx), rollouts, report_path); });
}

int bilat_plotdata(bilat_ctx* ctx, const char* episode_path, const char* out_prefix) {
  if (!ctx || !episode_path || !out_prefix) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] {
    plotdata_stage(need_config(ctx), episode_path, out_prefix);
  });
}

int bilat_validate_file(bilat_ctx* ctx, const char* path) {
  if (!ctx || !path) return BILAT_ERR_USAGE;
  return guarded(ctx, [&] { validate_file(path); });
}

int bilat_episode_open(bilat_ctx* ctx, const char* path, bilat_episode** out) {
  if (!ctx || !path || !out) return BILAT_ERR_USAGE;
  *out = nullptr;
  return guarded(ctx, [&] {
    auto* handle = new bilat_episode{read_episode(path)};
    *out = handle;
  });
}

void bilat_episode_free(bilat_episode* episode) { delete episode; }

int64_t bilat_episode_samples(const bilat_episode* e) {
  return e ? e->episode.samples : 0;
}

int64_t bilat_episode_frames(const bilat_episode* e) { return e ? e->episode.frames : 0; }

int bilat_episode_joint_count(const bilat_episode* e) {
  return e ? e->episode.joint_count : 0;
}

int bilat_episode_arm_count(const bilat_episode* e) {
  return e ? e->episode.arm_count : 0;
}

int bilat_episode_control_rate(const bilat_episode* e) {
  return e ? e->episode.control_rate : 0;
}

const char* bilat_episode_instruction(const bilat_episode* e) {
  return e ? e->episode.instruction.c_str() : "";
}

double bilat_episode_value(const bilat_episode* e, int leader_side, int64_t t, int arm,
                           int joint, int field) {
  if (!e) return 0.0;
  return e->episode.value(leader_side != 0, t, arm, joint, field);
}

}  // extern "C"
