#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bilat/episode.hpp"
#include "bilat/lang.hpp"
#include "bilat/tensor.hpp"

namespace bilat {

struct PolicyConfig {
  int encoder_layers = 4;   // CVAE posterior encoder depth
  int decoder_layers = 7;   // action decoder depth
  int model_dim = 128;
  int head_count = 8;
  int feedforward_dim = 512;
  int chunk_size = 20;      // K
  int latent_dim = 16;      // z
  double kl_weight = 10.0;  // beta
  int joint_count = 5;      // per arm
  int arm_count = 2;        // robots total
  int camera_count = 3;
  int image_width = 64;
  int image_height = 48;
  int language_dim = 64;
  int vision_grid_rows = 4;
  int vision_grid_cols = 6;
  std::vector<int> vision_channels = {16, 32, 64, 64};

  int leader_arms() const { return arm_count / 2; }
  int action_dim() const { return 3 * joint_count * leader_arms(); }
  int obs_dim() const { return action_dim(); }
  int vision_tokens() const {
    return camera_count * vision_grid_rows * vision_grid_cols;
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

// Per-channel z-score statistics from the training split.
struct NormStats {
  std::vector<double> obs_mean, obs_std;  // follower channels
  std::vector<double> act_mean, act_std;  // leader channels

  Matrix normalize_obs(std::span<const double> obs) const;       // [1, C]
  Matrix normalize_actions(const Matrix& raw) const;             // [K, C]
  Matrix denormalize_actions(const Matrix& normalized) const;    // [K, C]
};

struct ParamStore {
  std::map<std::string, Matrix> tensors;

  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
};

struct ModelParams {
  PolicyConfig config;
  std::string encoder_id;
  NormStats norm;
  ParamStore store;
};

ModelParams init_params(const PolicyConfig& cfg, uint64_t seed,
                        const std::string& encoder_id);

// Binds store tensors into one tape as leaves (copied once per context).
// Training contexts are built per sample; an inference context can be reused
// across queries since parameters never change.
class ModelContext {
 public:
  ModelContext(const ModelParams& params, bool training);

  Tensor p(const std::string& name);
  const ModelParams& params() const { return *params_; }
  const PolicyConfig& config() const { return params_->config; }
  bool training() const { return training_; }
  // leaf gradients after backward(), keyed by tensor name
  std::map<std::string, const Matrix*> gradients() const;

 private:
  const ModelParams* params_;
  bool training_;
  std::map<std::string, Tensor> leaves_;
};

// RGB8 frame bytes -> [3, H*W] in [0,1].
Matrix frame_to_matrix(const uint8_t* rgb, int width, int height);

// Spatial token grid per camera, projected to model_dim, 2-D positions added;
// frames are [3, H*W] matrices. Returns [cameras*grid, d].
Tensor vision_features(ModelContext& ctx, const std::vector<Matrix>& frames);

// CVAE posterior from [CLS; joint; action tokens]; returns (mu, logvar).
std::pair<Tensor, Tensor> cvae_encode(ModelContext& ctx, const Matrix& obs_norm,
                                      const Matrix& actions_norm);

// z = mu + exp(0.5*logvar) * noise
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Matrix& noise);

// Chunk decoder: K learned queries cross-attending to
// [visual; joint; language; z]. Returns normalized [K, action_dim].
Tensor decode(ModelContext& ctx, const Matrix& obs_norm,
              const std::vector<Matrix>& frames, const Matrix& language,
              const Tensor& z);

struct LossParts {
  Tensor total;
  Tensor recon;
  Tensor kl;
};

// recon = masked MAE, kl = gaussian KL to the prior, total = recon + beta*kl
LossParts chunk_loss(const Tensor& pred_norm, const Matrix& target_norm,
                     const Matrix& mask, const Tensor& mu, const Tensor& logvar,
                     double beta);

// ---------------------------------------------------------------------------
// training

struct TrainSettings {
  double learning_rate = 1e-4;
  int epochs = 200;
  int batch_size = 8;
  int steps_per_epoch = 8;
  int threads = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

void to_json(nlohmann::json& j, const TrainSettings& c);
void from_json(const nlohmann::json& j, TrainSettings& c);

struct TrainLogRow {
  int epoch = 0;
  double recon = 0.0, kl = 0.0, total = 0.0;
};

// Episodes at the image rate plus one embedding per episode.
struct Dataset {
  std::vector<Episode> episodes;
  std::vector<LanguageEmbedding> embeddings;
  std::string encoder_id;
  NormStats stats;
  int64_t total_samples = 0;

  std::pair<int, int64_t> locate(int64_t flat_index) const;  // (episode, t)
};

// Embeds every instruction, checks encoder uniformity and that distinct
// instructions received distinct embeddings, and computes normalization
// statistics over this split.
Dataset build_dataset(std::vector<Episode> episodes, const LanguageEncoder& encoder,
                      const PolicyConfig& cfg);

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogRow> log;
};

// Mini-batch Adam; a fixed seed reproduces the loss trajectory bit for bit.
// Throws on divergence, naming the offending batch.
TrainResult train(const Dataset& dataset, const PolicyConfig& cfg,
                  const TrainSettings& settings, uint64_t seed);

void write_train_log(const std::vector<TrainLogRow>& log,
                     const std::filesystem::path& csv_path);

// Deterministic z=0 decode; returns the de-normalized [K, action_dim] chunk.
// Rejects embeddings whose encoder does not match the checkpoint.
Matrix infer_chunk(ModelContext& ctx, std::span<const double> follower_obs,
                   const std::vector<Matrix>& frames,
                   const LanguageEmbedding& embedding);

// BLATM1 checkpoint: config header + named little-endian float32 blocks.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace bilat
