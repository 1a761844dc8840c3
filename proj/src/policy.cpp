#include "bilat/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "bilat/common.hpp"

namespace bilat {

void PolicyConfig::validate() const {
  if (encoder_layers < 1 || decoder_layers < 1) {
    throw ConfigError("PolicyConfig: layer counts must be >= 1");
  }
  if (model_dim < 2 || head_count < 1 || model_dim % head_count != 0) {
    throw ConfigError("PolicyConfig: model_dim must be divisible by head_count");
  }
  if (chunk_size < 1) throw ConfigError("PolicyConfig: chunk_size must be >= 1");
  if (latent_dim < 1) throw ConfigError("PolicyConfig: latent_dim must be >= 1");
  if (kl_weight < 0.0) throw ConfigError("PolicyConfig: kl_weight must be >= 0");
  if (arm_count != 2 && arm_count != 4) {
    throw ConfigError("PolicyConfig: arm_count must be 2 or 4");
  }
  if (camera_count < 1) throw ConfigError("PolicyConfig: camera_count must be >= 1");
  if (vision_channels.size() != 4) {
    throw ConfigError("PolicyConfig: vision backbone expects 4 block widths");
  }
  if (language_dim < 1) throw ConfigError("PolicyConfig: language_dim must be >= 1");
}

void to_json(nlohmann::json& j, const PolicyConfig& c) {
  j = nlohmann::json{{"encoder_layers", c.encoder_layers},
                     {"decoder_layers", c.decoder_layers},
                     {"model_dim", c.model_dim},
                     {"head_count", c.head_count},
                     {"feedforward_dim", c.feedforward_dim},
                     {"chunk_size", c.chunk_size},
                     {"latent_dim", c.latent_dim},
                     {"kl_weight", c.kl_weight},
                     {"joint_count", c.joint_count},
                     {"arm_count", c.arm_count},
                     {"camera_count", c.camera_count},
                     {"image_width", c.image_width},
                     {"image_height", c.image_height},
                     {"language_dim", c.language_dim},
                     {"vision_grid_rows", c.vision_grid_rows},
                     {"vision_grid_cols", c.vision_grid_cols},
                     {"vision_channels", c.vision_channels}};
}

void from_json(const nlohmann::json& j, PolicyConfig& c) {
  PolicyConfig d;
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.head_count = j.value("head_count", d.head_count);
  c.feedforward_dim = j.value("feedforward_dim", d.feedforward_dim);
  c.chunk_size = j.value("chunk_size", d.chunk_size);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.kl_weight = j.value("kl_weight", d.kl_weight);
  c.joint_count = j.value("joint_count", d.joint_count);
  c.arm_count = j.value("arm_count", d.arm_count);
  c.camera_count = j.value("camera_count", d.camera_count);
  c.image_width = j.value("image_width", d.image_width);
  c.image_height = j.value("image_height", d.image_height);
  c.language_dim = j.value("language_dim", d.language_dim);
  c.vision_grid_rows = j.value("vision_grid_rows", d.vision_grid_rows);
  c.vision_grid_cols = j.value("vision_grid_cols", d.vision_grid_cols);
  c.vision_channels = j.value("vision_channels", d.vision_channels);
}

void to_json(nlohmann::json& j, const TrainSettings& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"threads", c.threads},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainSettings& c) {
  TrainSettings d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.threads = j.value("threads", d.threads);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
}

// ---------------------------------------------------------------------------
// normalization

Matrix NormStats::normalize_obs(std::span<const double> obs) const {
  if (obs.size() != obs_mean.size()) {
    throw std::invalid_argument("normalize_obs: channel count mismatch");
  }
  Matrix m(1, static_cast<Eigen::Index>(obs.size()));
  for (size_t i = 0; i < obs.size(); ++i) m(0, i) = (obs[i] - obs_mean[i]) / obs_std[i];
  return m;
}

Matrix NormStats::normalize_actions(const Matrix& raw) const {
  if (raw.cols() != static_cast<Eigen::Index>(act_mean.size())) {
    throw std::invalid_argument("normalize_actions: channel count mismatch");
  }
  Matrix m = raw;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    m.col(c) = (m.col(c).array() - act_mean[c]) / act_std[c];
  }
  return m;
}

Matrix NormStats::denormalize_actions(const Matrix& normalized) const {
  if (normalized.cols() != static_cast<Eigen::Index>(act_mean.size())) {
    throw std::invalid_argument("denormalize_actions: channel count mismatch");
  }
  Matrix m = normalized;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    m.col(c) = m.col(c).array() * act_std[c] + act_mean[c];
  }
  return m;
}

Matrix& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::logic_error("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::logic_error("unknown parameter: " + name);
  return it->second;
}

// ---------------------------------------------------------------------------
// init

namespace {

struct Init {
  ParamStore* store;
  Rng* rng;

  void uniform(const std::string& name, Eigen::Index r, Eigen::Index c, double limit) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng->uniform(-limit, limit);
    store->tensors.emplace(name, std::move(m));
  }
  void xavier(const std::string& name, Eigen::Index in, Eigen::Index out) {
    uniform(name, in, out, std::sqrt(6.0 / static_cast<double>(in + out)));
  }
  void zeros(const std::string& name, Eigen::Index r, Eigen::Index c) {
    store->tensors.emplace(name, Matrix::Zero(r, c));
  }
  void ones(const std::string& name, Eigen::Index r, Eigen::Index c) {
    store->tensors.emplace(name, Matrix::Ones(r, c));
  }
  void attention(const std::string& prefix, int d) {
    for (const char* part : {"wq", "wk", "wv", "wo"}) {
      xavier(prefix + "." + part, d, d);
    }
    for (const char* part : {"bq", "bk", "bv", "bo"}) {
      zeros(prefix + "." + part, 1, d);
    }
  }
  void norm_pair(const std::string& prefix, int d) {
    ones(prefix + ".g", 1, d);
    zeros(prefix + ".b", 1, d);
  }
  void feedforward(const std::string& prefix, int d, int dff) {
    xavier(prefix + ".w1", d, dff);
    zeros(prefix + ".b1", 1, dff);
    xavier(prefix + ".w2", dff, d);
    zeros(prefix + ".b2", 1, d);
  }
};

}  // namespace

ModelParams init_params(const PolicyConfig& cfg, uint64_t seed,
                        const std::string& encoder_id) {
  cfg.validate();
  ModelParams params;
  params.config = cfg;
  params.encoder_id = encoder_id;
  Rng rng(mix64(seed ^ 0x9017c9ull));
  Init in{&params.store, &rng};
  const int d = cfg.model_dim;

  // vision backbone: three stride-2 blocks, one stride-1, then 1x1 projection
  int cin = 3;
  for (int b = 0; b < 4; ++b) {
    const int cout = cfg.vision_channels[b];
    in.uniform("vision.conv" + std::to_string(b) + ".w", cout, cin * 9,
               std::sqrt(6.0 / (cin * 9.0)));
    in.zeros("vision.conv" + std::to_string(b) + ".b", cout, 1);
    cin = cout;
  }
  in.xavier("vision.proj.w", cin, d);
  in.zeros("vision.proj.b", 1, d);
  for (int c = 0; c < cfg.camera_count; ++c) {
    in.uniform("vision.cam" + std::to_string(c), 1, d, 0.02);
  }

  in.xavier("obs.proj.w", cfg.obs_dim(), d);
  in.zeros("obs.proj.b", 1, d);
  in.xavier("lang.proj.w", cfg.language_dim, d);
  in.zeros("lang.proj.b", 1, d);
  in.xavier("latent.proj.w", cfg.latent_dim, d);
  in.zeros("latent.proj.b", 1, d);
  for (const char* slot : {"mem.obs_slot", "mem.lang_slot", "mem.z_slot"}) {
    in.uniform(slot, 1, d, 0.02);
  }

  // CVAE posterior encoder
  in.uniform("cvae.cls", 1, d, 0.02);
  in.xavier("cvae.act_proj.w", cfg.action_dim(), d);
  in.zeros("cvae.act_proj.b", 1, d);
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    in.attention(p + ".attn", d);
    in.norm_pair(p + ".ln1", d);
    in.feedforward(p + ".ff", d, cfg.feedforward_dim);
    in.norm_pair(p + ".ln2", d);
  }
  in.norm_pair("enc.final", d);
  in.xavier("cvae.mu.w", d, cfg.latent_dim);
  in.zeros("cvae.mu.b", 1, cfg.latent_dim);
  in.xavier("cvae.logvar.w", d, cfg.latent_dim);
  in.zeros("cvae.logvar.b", 1, cfg.latent_dim);

  // action decoder
  in.uniform("query", cfg.chunk_size, d, 0.02);
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    in.attention(p + ".self", d);
    in.norm_pair(p + ".ln1", d);
    in.attention(p + ".cross", d);
    in.norm_pair(p + ".ln2", d);
    in.feedforward(p + ".ff", d, cfg.feedforward_dim);
    in.norm_pair(p + ".ln3", d);
  }
  in.norm_pair("dec.final", d);
  in.xavier("head.w", d, cfg.action_dim());
  in.zeros("head.b", 1, cfg.action_dim());

  params.norm.obs_mean.assign(cfg.obs_dim(), 0.0);
  params.norm.obs_std.assign(cfg.obs_dim(), 1.0);
  params.norm.act_mean.assign(cfg.action_dim(), 0.0);
  params.norm.act_std.assign(cfg.action_dim(), 1.0);
  return params;
}

// ---------------------------------------------------------------------------
// forward

ModelContext::ModelContext(const ModelParams& params, bool training)
    : params_(&params), training_(training) {}

Tensor ModelContext::p(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  Tensor t = Tensor::leaf(params_->store.at(name), training_);
  leaves_.emplace(name, t);
  return t;
}

std::map<std::string, const Matrix*> ModelContext::gradients() const {
  std::map<std::string, const Matrix*> out;
  for (const auto& [name, leaf] : leaves_) {
    if (leaf.has_grad()) out.emplace(name, &leaf.grad());
  }
  return out;
}

Matrix frame_to_matrix(const uint8_t* rgb, int width, int height) {
  Matrix m(3, static_cast<Eigen::Index>(width) * height);
  const size_t pixels = static_cast<size_t>(width) * height;
  for (size_t p = 0; p < pixels; ++p) {
    m(0, p) = rgb[3 * p] / 255.0;
    m(1, p) = rgb[3 * p + 1] / 255.0;
    m(2, p) = rgb[3 * p + 2] / 255.0;
  }
  return m;
}

namespace {

AttentionWeights attention_weights(ModelContext& ctx, const std::string& prefix) {
  return {ctx.p(prefix + ".wq"), ctx.p(prefix + ".bq"), ctx.p(prefix + ".wk"),
          ctx.p(prefix + ".bk"), ctx.p(prefix + ".wv"), ctx.p(prefix + ".bv"),
          ctx.p(prefix + ".wo"), ctx.p(prefix + ".bo")};
}

Tensor feed_forward(ModelContext& ctx, const std::string& prefix, const Tensor& x) {
  Tensor h = relu(add_rowwise(matmul(x, ctx.p(prefix + ".w1")), ctx.p(prefix + ".b1")));
  return add_rowwise(matmul(h, ctx.p(prefix + ".w2")), ctx.p(prefix + ".b2"));
}

Tensor norm(ModelContext& ctx, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, ctx.p(prefix + ".g"), ctx.p(prefix + ".b"));
}

// pre-norm blocks with residual connections
Tensor encoder_block(ModelContext& ctx, const std::string& p, Tensor h, int heads) {
  Tensor n1 = norm(ctx, p + ".ln1", h);
  h = add(h, multihead_attention(n1, n1, attention_weights(ctx, p + ".attn"), heads));
  h = add(h, feed_forward(ctx, p + ".ff", norm(ctx, p + ".ln2", h)));
  return h;
}

Tensor decoder_block(ModelContext& ctx, const std::string& p, Tensor h,
                     const Tensor& memory, int heads) {
  Tensor n1 = norm(ctx, p + ".ln1", h);
  h = add(h, multihead_attention(n1, n1, attention_weights(ctx, p + ".self"), heads));
  Tensor n2 = norm(ctx, p + ".ln2", h);
  h = add(h,
          multihead_attention(n2, memory, attention_weights(ctx, p + ".cross"), heads));
  h = add(h, feed_forward(ctx, p + ".ff", norm(ctx, p + ".ln3", h)));
  return h;
}

Matrix embedding_matrix(const LanguageEmbedding& emb) {
  Matrix m(1, emb.dim());
  for (int i = 0; i < emb.dim(); ++i) m(0, i) = emb.values[i];
  return m;
}

}  // namespace

Tensor vision_features(ModelContext& ctx, const std::vector<Matrix>& frames) {
  const PolicyConfig& cfg = ctx.config();
  if (static_cast<int>(frames.size()) != cfg.camera_count) {
    throw std::invalid_argument("vision_features: expected " +
                                std::to_string(cfg.camera_count) + " frames, got " +
                                std::to_string(frames.size()));
  }
  const Matrix pos =
      sinusoid_positions_2d(cfg.vision_grid_rows, cfg.vision_grid_cols, cfg.model_dim);
  std::vector<Tensor> all;
  all.reserve(frames.size());
  for (int c = 0; c < cfg.camera_count; ++c) {
    if (frames[c].rows() != 3 ||
        frames[c].cols() !=
            static_cast<Eigen::Index>(cfg.image_width) * cfg.image_height) {
      throw std::invalid_argument("vision_features: frame size mismatch");
    }
    Tensor x = Tensor::constant(frames[c]);
    ConvGeom g;
    g.in_channels = 3;
    g.height = cfg.image_height;
    g.width = cfg.image_width;
    for (int b = 0; b < 4; ++b) {
      g.stride = b < 3 ? 2 : 1;
      const std::string name = "vision.conv" + std::to_string(b);
      x = relu(conv2d(x, ctx.p(name + ".w"), ctx.p(name + ".b"), g));
      const int oh = g.out_height(), ow = g.out_width();
      g.in_channels = cfg.vision_channels[b];
      g.height = oh;
      g.width = ow;
    }
    const Matrix pool = average_pool_matrix(g.height, g.width, cfg.vision_grid_rows,
                                            cfg.vision_grid_cols);
    Tensor feat = matmul(x, Tensor::constant(pool.transpose()));  // [C, grid]
    Tensor tokens = add_rowwise(matmul(transpose(feat), ctx.p("vision.proj.w")),
                                ctx.p("vision.proj.b"));
    tokens = add(tokens, Tensor::constant(pos));
    tokens = add_rowwise(tokens, ctx.p("vision.cam" + std::to_string(c)));
    all.push_back(tokens);
  }
  return concat_rows(all);
}

std::pair<Tensor, Tensor> cvae_encode(ModelContext& ctx, const Matrix& obs_norm,
                                      const Matrix& actions_norm) {
  const PolicyConfig& cfg = ctx.config();
  if (obs_norm.rows() != 1 || obs_norm.cols() != cfg.obs_dim()) {
    throw std::invalid_argument("cvae_encode: observation shape mismatch");
  }
  if (actions_norm.rows() != cfg.chunk_size ||
      actions_norm.cols() != cfg.action_dim()) {
    throw std::invalid_argument("cvae_encode: action sequence shape mismatch");
  }
  Tensor obs_token = add_rowwise(matmul(Tensor::constant(obs_norm), ctx.p("obs.proj.w")),
                                 ctx.p("obs.proj.b"));
  Tensor act_tokens =
      add_rowwise(matmul(Tensor::constant(actions_norm), ctx.p("cvae.act_proj.w")),
                  ctx.p("cvae.act_proj.b"));
  Tensor seq = concat_rows({ctx.p("cvae.cls"), obs_token, act_tokens});
  seq =
      add(seq, Tensor::constant(sinusoid_positions(cfg.chunk_size + 2, cfg.model_dim)));
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    seq = encoder_block(ctx, "enc" + std::to_string(l), seq, cfg.head_count);
  }
  seq = norm(ctx, "enc.final", seq);
  Tensor cls = slice_rows(seq, 0, 1);
  Tensor mu = add_rowwise(matmul(cls, ctx.p("cvae.mu.w")), ctx.p("cvae.mu.b"));
  Tensor logvar =
      add_rowwise(matmul(cls, ctx.p("cvae.logvar.w")), ctx.p("cvae.logvar.b"));
  return {mu, logvar};
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Matrix& noise) {
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw std::invalid_argument("reparameterize: noise shape mismatch");
  }
  return add(mu, hadamard(exp(scale(logvar, 0.5)), Tensor::constant(noise)));
}

Tensor decode(ModelContext& ctx, const Matrix& obs_norm,
              const std::vector<Matrix>& frames, const Matrix& language,
              const Tensor& z) {
  const PolicyConfig& cfg = ctx.config();
  if (language.rows() != 1 || language.cols() != cfg.language_dim) {
    throw std::invalid_argument("decode: language embedding dim mismatch");
  }
  if (z.rows() != 1 || z.cols() != cfg.latent_dim) {
    throw std::invalid_argument("decode: latent dim mismatch");
  }
  Tensor visual = vision_features(ctx, frames);
  Tensor obs_token = add_rowwise(matmul(Tensor::constant(obs_norm), ctx.p("obs.proj.w")),
                                 ctx.p("obs.proj.b"));
  obs_token = add_rowwise(obs_token, ctx.p("mem.obs_slot"));
  Tensor lang_token =
      add_rowwise(matmul(Tensor::constant(language), ctx.p("lang.proj.w")),
                  ctx.p("lang.proj.b"));
  lang_token = add_rowwise(lang_token, ctx.p("mem.lang_slot"));
  Tensor z_token = add_rowwise(matmul(z, ctx.p("latent.proj.w")), ctx.p("latent.proj.b"));
  z_token = add_rowwise(z_token, ctx.p("mem.z_slot"));

  Tensor memory = concat_rows({visual, obs_token, lang_token, z_token});
  Tensor h = ctx.p("query");
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    h = decoder_block(ctx, "dec" + std::to_string(l), h, memory, cfg.head_count);
  }
  h = norm(ctx, "dec.final", h);
  return add_rowwise(matmul(h, ctx.p("head.w")), ctx.p("head.b"));
}

LossParts chunk_loss(const Tensor& pred_norm, const Matrix& target_norm,
                     const Matrix& mask, const Tensor& mu, const Tensor& logvar,
                     double beta) {
  LossParts parts;
  parts.recon = masked_mae(pred_norm, target_norm, mask);
  parts.kl = kl_gauss(mu, logvar);
  parts.total = add(parts.recon, scale(parts.kl, beta));
  return parts;
}

// ---------------------------------------------------------------------------
// dataset

std::pair<int, int64_t> Dataset::locate(int64_t flat_index) const {
  for (size_t e = 0; e < episodes.size(); ++e) {
    if (flat_index < episodes[e].samples) return {static_cast<int>(e), flat_index};
    flat_index -= episodes[e].samples;
  }
  throw std::out_of_range("Dataset::locate: index past the end");
}

Dataset build_dataset(std::vector<Episode> episodes, const LanguageEncoder& encoder,
                      const PolicyConfig& cfg) {
  if (episodes.empty()) throw std::invalid_argument("build_dataset: no episodes");
  Dataset ds;
  ds.encoder_id = encoder.id();
  if (encoder.dim() != cfg.language_dim) {
    throw ConfigError("encoder dim " + std::to_string(encoder.dim()) +
                      " != policy language_dim " + std::to_string(cfg.language_dim));
  }

  std::map<std::string, std::vector<double>> by_instruction;
  for (const auto& ep : episodes) {
    if (ep.joint_count != cfg.joint_count || ep.arm_count != cfg.arm_count) {
      throw ConfigError("episode joint/arm counts do not match the policy config");
    }
    if (static_cast<int>(ep.camera->cameras.size()) != cfg.camera_count) {
      throw ConfigError("episode camera count does not match the policy config");
    }
    LanguageEmbedding emb = encoder.encode(ep.instruction_raw);
    if (emb.encoder_id != ds.encoder_id) {
      throw std::runtime_error("mixed encoder ids in one training run");
    }
    by_instruction.emplace(ep.instruction, emb.values);
    ds.embeddings.push_back(std::move(emb));
    ds.total_samples += ep.samples;
  }
  // conditioning precondition: distinct instructions must separate
  if (ds.encoder_id != "none") {
    for (auto a = by_instruction.begin(); a != by_instruction.end(); ++a) {
      for (auto b = std::next(a); b != by_instruction.end(); ++b) {
        if (a->second == b->second) {
          throw std::runtime_error(
              "language encoder maps distinct instructions \"" + a->first + "\" and \"" +
              b->first + "\" to identical embeddings; choose another encoder seed");
        }
      }
    }
  }

  const int channels = cfg.obs_dim();
  std::vector<double> obs_sum(channels, 0.0), obs_sq(channels, 0.0);
  std::vector<double> act_sum(channels, 0.0), act_sq(channels, 0.0);
  int64_t count = 0;
  for (const auto& ep : episodes) {
    for (int64_t t = 0; t < ep.samples; ++t) {
      for (int c = 0; c < channels; ++c) {
        const double o = ep.follower[t * channels + c];
        const double a = ep.leader[t * channels + c];
        obs_sum[c] += o;
        obs_sq[c] += o * o;
        act_sum[c] += a;
        act_sq[c] += a * a;
      }
      ++count;
    }
  }
  ds.stats.obs_mean.resize(channels);
  ds.stats.obs_std.resize(channels);
  ds.stats.act_mean.resize(channels);
  ds.stats.act_std.resize(channels);
  for (int c = 0; c < channels; ++c) {
    ds.stats.obs_mean[c] = obs_sum[c] / count;
    ds.stats.act_mean[c] = act_sum[c] / count;
    const double ov = obs_sq[c] / count - ds.stats.obs_mean[c] * ds.stats.obs_mean[c];
    const double av = act_sq[c] / count - ds.stats.act_mean[c] * ds.stats.act_mean[c];
    ds.stats.obs_std[c] = std::max(std::sqrt(std::max(ov, 0.0)), 1e-6);
    ds.stats.act_std[c] = std::max(std::sqrt(std::max(av, 0.0)), 1e-6);
  }
  ds.episodes = std::move(episodes);
  return ds;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct TrainSample {
  Matrix obs_norm;
  std::vector<Matrix> frames;
  const LanguageEmbedding* embedding = nullptr;
  Matrix target_norm;
  Matrix mask;
  Matrix noise;
};

TrainSample make_sample(const Dataset& ds, const PolicyConfig& cfg, int episode_idx,
                        int64_t t, Matrix noise) {
  const Episode& ep = ds.episodes[episode_idx];
  const int channels = cfg.obs_dim();
  TrainSample s;
  std::vector<double> obs(channels);
  for (int c = 0; c < channels; ++c) obs[c] = ep.follower[t * channels + c];
  s.obs_norm = ds.stats.normalize_obs(obs);

  const int64_t frame = ep.frame_for_sample(t);
  for (const auto& cam : ep.camera->cameras) {
    s.frames.push_back(frame_to_matrix(cam.frame(frame), cam.width, cam.height));
  }
  s.embedding = &ds.embeddings[episode_idx];

  Matrix target = Matrix::Zero(cfg.chunk_size, channels);
  s.mask = Matrix::Zero(cfg.chunk_size, 1);
  for (int k = 0; k < cfg.chunk_size; ++k) {
    const int64_t tk = t + k;
    if (tk >= ep.samples) break;
    for (int c = 0; c < channels; ++c) target(k, c) = ep.leader[tk * channels + c];
    s.mask(k, 0) = 1.0;
  }
  s.target_norm = ds.stats.normalize_actions(target);
  for (int k = 0; k < cfg.chunk_size; ++k) {
    if (s.mask(k, 0) == 0.0) s.target_norm.row(k).setZero();
  }
  s.noise = std::move(noise);
  return s;
}

struct SampleResult {
  std::map<std::string, Matrix> grads;
  double recon = 0.0, kl = 0.0, total = 0.0;
};

SampleResult run_sample(const ModelParams& params, const TrainSample& s) {
  ModelContext ctx(params, /*training=*/true);
  auto [mu, logvar] = cvae_encode(ctx, s.obs_norm, s.target_norm);
  Tensor z = reparameterize(mu, logvar, s.noise);
  Tensor pred = decode(ctx, s.obs_norm, s.frames, embedding_matrix(*s.embedding), z);
  LossParts loss =
      chunk_loss(pred, s.target_norm, s.mask, mu, logvar, params.config.kl_weight);
  loss.total.backward();
  SampleResult r;
  r.recon = loss.recon.value()(0, 0);
  r.kl = loss.kl.value()(0, 0);
  r.total = loss.total.value()(0, 0);
  for (const auto& [name, grad] : ctx.gradients()) r.grads.emplace(name, *grad);
  return r;
}

class Adam {
 public:
  explicit Adam(const TrainSettings& s) : s_(s) {}

  void step(ParamStore& store, const std::map<std::string, Matrix>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(s_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.adam_beta2, static_cast<double>(t_));
    for (auto& [name, value] : store.tensors) {
      const auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Matrix& g = git->second;
      Matrix& m = m_[name];
      Matrix& v = v_[name];
      if (m.size() == 0) {
        m = Matrix::Zero(g.rows(), g.cols());
        v = Matrix::Zero(g.rows(), g.cols());
      }
      m = s_.adam_beta1 * m + (1.0 - s_.adam_beta1) * g;
      v = s_.adam_beta2 * v + (1.0 - s_.adam_beta2) * g.cwiseProduct(g);
      value.array() -= s_.learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + s_.adam_eps);
    }
  }

 private:
  TrainSettings s_;
  int64_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

}  // namespace

TrainResult train(const Dataset& dataset, const PolicyConfig& cfg,
                  const TrainSettings& settings, uint64_t seed) {
  cfg.validate();
  if (dataset.episodes.empty() || dataset.total_samples == 0) {
    throw std::invalid_argument("train: empty dataset");
  }
  TrainResult result;
  result.params = init_params(cfg, seed, dataset.encoder_id);
  result.params.norm = dataset.stats;

  Rng rng(mix64(seed ^ 0x7ea1717aull));
  Adam adam(settings);
  const int batch = settings.batch_size;
  const int threads = std::max(1, std::min(settings.threads, batch));

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    double er = 0.0, ek = 0.0, et = 0.0;
    for (int step = 0; step < settings.steps_per_epoch; ++step) {
      // draw the whole batch (and its noise) up front so the schedule does
      // not depend on thread interleaving
      std::vector<TrainSample> samples;
      samples.reserve(batch);
      for (int b = 0; b < batch; ++b) {
        const auto [e, t] = dataset.locate(rng.index(dataset.total_samples));
        Matrix noise(1, cfg.latent_dim);
        for (int i = 0; i < cfg.latent_dim; ++i) noise(0, i) = rng.normal();
        samples.push_back(make_sample(dataset, cfg, e, t, std::move(noise)));
      }

      std::vector<SampleResult> results(batch);
      auto worker = [&](int first, int last) {
        for (int b = first; b < last; ++b) {
          results[b] = run_sample(result.params, samples[b]);
        }
      };
      if (threads == 1) {
        worker(0, batch);
      } else {
        std::vector<std::thread> pool;
        const int per = (batch + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
          const int first = t * per;
          const int last = std::min(batch, first + per);
          if (first < last) pool.emplace_back(worker, first, last);
        }
        for (auto& th : pool) th.join();
      }

      // fixed-order reduction keeps updates bit-identical across thread counts
      std::map<std::string, Matrix> grads;
      double sr = 0.0, sk = 0.0, st = 0.0;
      for (int b = 0; b < batch; ++b) {
        if (!std::isfinite(results[b].total)) {
          throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ", batch element " +
                                   std::to_string(b));
        }
        sr += results[b].recon;
        sk += results[b].kl;
        st += results[b].total;
        for (auto& [name, g] : results[b].grads) {
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, g);
          } else {
            it->second += g;
          }
        }
      }
      for (auto& [name, g] : grads) g /= static_cast<double>(batch);
      adam.step(result.params.store, grads);
      er += sr / batch;
      ek += sk / batch;
      et += st / batch;
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.recon = er / settings.steps_per_epoch;
    row.kl = ek / settings.steps_per_epoch;
    row.total = et / settings.steps_per_epoch;
    result.log.push_back(row);
  }
  return result;
}

void write_train_log(const std::vector<TrainLogRow>& log,
                     const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + csv_path.string());
  out << "epoch,recon,kl,total\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.epoch << "," << r.recon << "," << r.kl << "," << r.total << "\n";
  }
}

Matrix infer_chunk(ModelContext& ctx, std::span<const double> follower_obs,
                   const std::vector<Matrix>& frames,
                   const LanguageEmbedding& embedding) {
  const ModelParams& params = ctx.params();
  if (embedding.encoder_id != params.encoder_id) {
    throw std::invalid_argument("encoder mismatch: checkpoint was trained with '" +
                                params.encoder_id + "', embedding came from '" +
                                embedding.encoder_id + "'");
  }
  if (embedding.dim() != params.config.language_dim) {
    throw std::invalid_argument("infer_chunk: embedding dim mismatch");
  }
  const Matrix obs_norm = params.norm.normalize_obs(follower_obs);
  const Tensor z = Tensor::constant(Matrix::Zero(1, params.config.latent_dim));
  Tensor pred = decode(ctx, obs_norm, frames, embedding_matrix(embedding), z);
  return params.norm.denormalize_actions(pred.value());
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kModelMagic[6] = {'B', 'L', 'A', 'T', 'M', '1'};
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = params.config;
  header["encoder_id"] = params.encoder_id;

  // normalization statistics ride along as ordinary tensor blocks
  std::map<std::string, Matrix> blocks;
  for (const auto& [name, m] : params.store.tensors) blocks.emplace(name, m);
  auto as_row = [](const std::vector<double>& v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
    return m;
  };
  blocks.emplace("norm.obs_mean", as_row(params.norm.obs_mean));
  blocks.emplace("norm.obs_std", as_row(params.norm.obs_std));
  blocks.emplace("norm.act_mean", as_row(params.norm.act_mean));
  blocks.emplace("norm.act_std", as_row(params.norm.act_std));

  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, m] : blocks) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  std::vector<float> buf;
  for (const auto& [name, m] : blocks) {
    buf.resize(static_cast<size_t>(m.size()));
    size_t i = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) buf[i++] = static_cast<float>(m(r, c));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kModelMagic) + 4) {
    throw FormatError("truncated checkpoint (no header): " + path.string());
  }
  if (std::memcmp(buf.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw FormatError("bad magic (not a BLATM1 checkpoint): " + path.string());
  }
  uint32_t hlen = 0;
  std::memcpy(&hlen, buf.data() + sizeof(kModelMagic), 4);
  const size_t hoff = sizeof(kModelMagic) + 4;
  if (hoff + hlen > buf.size()) {
    throw FormatError("checkpoint header length mismatch at offset " +
                      std::to_string(hoff));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + hoff, buf.begin() + hoff + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  ModelParams params;
  params.config = header.at("config").get<PolicyConfig>();
  params.config.validate();
  params.encoder_id = header.at("encoder_id").get<std::string>();

  size_t off = hoff + hlen;
  size_t expected = 0;
  for (const auto& t : header.at("tensors")) {
    expected += t.at("rows").get<size_t>() * t.at("cols").get<size_t>() * sizeof(float);
  }
  if (buf.size() - off != expected) {
    throw FormatError("checkpoint payload length mismatch: expected " +
                      std::to_string(expected) + " bytes, found " +
                      std::to_string(buf.size() - off));
  }

  auto take_row = [](const Matrix& m) {
    std::vector<double> v(static_cast<size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.cols(); ++i) v[i] = m(0, i);
    return v;
  };
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    const float* src = reinterpret_cast<const float*>(buf.data() + off);
    size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = src[i++];
    }
    off += static_cast<size_t>(rows) * cols * sizeof(float);
    if (name == "norm.obs_mean") {
      params.norm.obs_mean = take_row(m);
    } else if (name == "norm.obs_std") {
      params.norm.obs_std = take_row(m);
    } else if (name == "norm.act_mean") {
      params.norm.act_mean = take_row(m);
    } else if (name == "norm.act_std") {
      params.norm.act_std = take_row(m);
    } else {
      params.store.tensors.emplace(name, std::move(m));
    }
  }
  return params;
}

}  // namespace bilat
