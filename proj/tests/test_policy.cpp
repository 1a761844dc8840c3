#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bilat/policy.hpp"

using namespace bilat;
namespace fs = std::filesystem;

namespace {

// reduced model: d=16, 1+1 layers, K=2, one small camera
PolicyConfig tiny_config() {
  PolicyConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.model_dim = 16;
  c.head_count = 2;
  c.feedforward_dim = 32;
  c.chunk_size = 2;
  c.latent_dim = 4;
  c.kl_weight = 1.0;
  c.joint_count = 5;
  c.arm_count = 2;
  c.camera_count = 1;
  c.image_width = 16;
  c.image_height = 12;
  c.language_dim = 16;
  c.vision_grid_rows = 2;
  c.vision_grid_cols = 3;
  c.vision_channels = {4, 6, 8, 8};
  return c;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

std::vector<Matrix> random_frames(const PolicyConfig& cfg, std::mt19937_64& rng) {
  std::vector<Matrix> frames;
  for (int c = 0; c < cfg.camera_count; ++c) {
    frames.push_back(random_matrix(3, cfg.image_width * cfg.image_height, rng, 0.0, 1.0));
  }
  return frames;
}

struct FixedInput {
  Matrix obs, lang, target, mask, noise;
  std::vector<Matrix> frames;
};

FixedInput fixed_input(const PolicyConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  FixedInput in;
  in.obs = random_matrix(1, cfg.obs_dim(), rng);
  in.lang = random_matrix(1, cfg.language_dim, rng);
  in.target = random_matrix(cfg.chunk_size, cfg.action_dim(), rng);
  in.mask = Matrix::Ones(cfg.chunk_size, 1);
  in.noise = random_matrix(1, cfg.latent_dim, rng);
  in.frames = random_frames(cfg, rng);
  return in;
}

double training_loss(const ModelParams& params, const FixedInput& in,
                     ModelContext* keep_ctx = nullptr) {
  ModelContext local(params, true);
  ModelContext& ctx = keep_ctx ? *keep_ctx : local;
  auto [mu, logvar] = cvae_encode(ctx, in.obs, in.target);
  Tensor z = reparameterize(mu, logvar, in.noise);
  Tensor pred = decode(ctx, in.obs, in.frames, in.lang, z);
  LossParts loss = chunk_loss(pred, in.target, in.mask, mu, logvar,
                              params.config.kl_weight);
  if (keep_ctx) loss.total.backward();
  return loss.total.value()(0, 0);
}

}  // namespace

TEST_CASE("vision features produce one token per grid cell per camera") {
  PolicyConfig cfg;  // defaults: 3 cameras, 6x4 grid, 64x48 frames
  cfg.validate();
  ModelParams params = init_params(cfg, 11, "hashed64");

  std::vector<Matrix> frames;
  for (int c = 0; c < 3; ++c) frames.push_back(Matrix::Zero(3, 64 * 48));
  ModelContext ctx(params, false);
  Tensor tokens = vision_features(ctx, frames);
  CHECK(tokens.rows() == 72);  // 3 cameras x 6x4 grid
  CHECK(tokens.cols() == cfg.model_dim);

  // all-black vs all-white differ
  std::vector<Matrix> white;
  for (int c = 0; c < 3; ++c) white.push_back(Matrix::Ones(3, 64 * 48));
  ModelContext ctx2(params, false);
  Tensor tokens2 = vision_features(ctx2, white);
  CHECK((tokens.value() - tokens2.value()).cwiseAbs().maxCoeff() > 1e-6);

  // identical frames give identical tokens
  ModelContext ctx3(params, false);
  Tensor tokens3 = vision_features(ctx3, frames);
  CHECK(tokens.value() == tokens3.value());
}

TEST_CASE("cvae encoder emits latent moments and is position sensitive") {
  PolicyConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 3, "test");
  FixedInput in = fixed_input(cfg, 5);

  ModelContext ctx(params, false);
  auto [mu, logvar] = cvae_encode(ctx, in.obs, in.target);
  CHECK(mu.rows() == 1);
  CHECK(mu.cols() == cfg.latent_dim);
  CHECK(logvar.rows() == 1);
  CHECK(logvar.cols() == cfg.latent_dim);

  // determinism
  ModelContext ctx2(params, false);
  auto [mu2, logvar2] = cvae_encode(ctx2, in.obs, in.target);
  CHECK(mu.value() == mu2.value());
  CHECK(logvar.value() == logvar2.value());

  // swapping two action rows must change the moments (positional encoding)
  Matrix swapped = in.target;
  swapped.row(0).swap(swapped.row(1));
  ModelContext ctx3(params, false);
  auto [mu3, logvar3] = cvae_encode(ctx3, in.obs, swapped);
  CHECK((mu.value() - mu3.value()).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("reparameterize matches the closed form") {
  Matrix mu(1, 4);
  mu << 0.3, -0.2, 1.0, 0.0;
  Matrix logvar = Matrix::Zero(1, 4);

  SUBCASE("zero noise returns the mean") {
    Tensor z = reparameterize(Tensor::constant(mu), Tensor::constant(logvar),
                              Matrix::Zero(1, 4));
    CHECK(z.value() == mu);
  }
  SUBCASE("unit sigma shifts by the noise") {
    Tensor z = reparameterize(Tensor::constant(mu), Tensor::constant(logvar),
                              Matrix::Ones(1, 4));
    for (int i = 0; i < 4; ++i) CHECK(z.value()(0, i) == doctest::Approx(mu(0, i) + 1.0));
  }
  SUBCASE("logvar = 2 ln 2 with noise 0.5 adds exactly one") {
    Matrix lv = Matrix::Constant(1, 4, 2.0 * std::log(2.0));
    Tensor z = reparameterize(Tensor::constant(Matrix::Zero(1, 4)), Tensor::constant(lv),
                              Matrix::Constant(1, 4, 0.5));
    for (int i = 0; i < 4; ++i) CHECK(z.value()(0, i) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("decoder output shape and language sensitivity") {
  PolicyConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 21, "test");
  FixedInput in = fixed_input(cfg, 9);
  const Tensor z0 = Tensor::constant(Matrix::Zero(1, cfg.latent_dim));

  ModelContext ctx(params, false);
  Tensor pred = decode(ctx, in.obs, in.frames, in.lang, z0);
  CHECK(pred.rows() == cfg.chunk_size);
  CHECK(pred.cols() == 15);  // 3 values x 5 joints x 1 leader arm

  // changing only the language embedding changes the output
  Matrix lang2 = in.lang;
  lang2(0, 0) += 0.5;
  ModelContext ctx2(params, false);
  Tensor pred2 = decode(ctx2, in.obs, in.frames, lang2, z0);
  CHECK((pred.value() - pred2.value()).cwiseAbs().maxCoeff() > 1e-9);

  // zeroing the language projection makes the output instruction-invariant
  ModelParams ablated = params;
  ablated.store.at("lang.proj.w").setZero();
  ModelContext ctx3(ablated, false);
  ModelContext ctx4(ablated, false);
  Tensor pred3 = decode(ctx3, in.obs, in.frames, in.lang, z0);
  Tensor pred4 = decode(ctx4, in.obs, in.frames, lang2, z0);
  CHECK(pred3.value() == pred4.value());
}

TEST_CASE("chunk loss composition") {
  PolicyConfig cfg = tiny_config();
  std::mt19937_64 rng(33);
  Matrix target = random_matrix(cfg.chunk_size, cfg.action_dim(), rng);
  Matrix mask = Matrix::Ones(cfg.chunk_size, 1);

  SUBCASE("perfect fit with prior-matched posterior scores zero") {
    LossParts l = chunk_loss(Tensor::constant(target), target, mask,
                             Tensor::constant(Matrix::Zero(1, 4)),
                             Tensor::constant(Matrix::Zero(1, 4)), 10.0);
    CHECK(l.total.value()(0, 0) == 0.0);
    CHECK(l.recon.value()(0, 0) == 0.0);
    CHECK(l.kl.value()(0, 0) == 0.0);
  }
  SUBCASE("kl hand value: unit means, z_dim 4") {
    LossParts l = chunk_loss(Tensor::constant(target), target, mask,
                             Tensor::constant(Matrix::Ones(1, 4)),
                             Tensor::constant(Matrix::Zero(1, 4)), 1.0);
    CHECK(l.kl.value()(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(l.total.value()(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("beta 0 reduces to the reconstruction term") {
    Matrix pred = target;
    pred.array() += 0.25;
    LossParts l = chunk_loss(Tensor::constant(pred), target, mask,
                             Tensor::constant(Matrix::Ones(1, 4)),
                             Tensor::constant(Matrix::Ones(1, 4)), 0.0);
    CHECK(l.total.value()(0, 0) == l.recon.value()(0, 0));
  }
  SUBCASE("masked rows do not affect the loss") {
    Matrix m2 = mask;
    m2(1, 0) = 0.0;
    Matrix pred = target;
    pred.array() += 0.1;
    Matrix target2 = target;
    target2.row(1).setConstant(99.0);
    LossParts a = chunk_loss(Tensor::constant(pred), target, m2,
                             Tensor::constant(Matrix::Zero(1, 4)),
                             Tensor::constant(Matrix::Zero(1, 4)), 1.0);
    LossParts b = chunk_loss(Tensor::constant(pred), target2, m2,
                             Tensor::constant(Matrix::Zero(1, 4)),
                             Tensor::constant(Matrix::Zero(1, 4)), 1.0);
    CHECK(a.total.value()(0, 0) == b.total.value()(0, 0));
  }
}

TEST_CASE("full-model gradients match finite differences") {
  PolicyConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 77, "test");
  FixedInput in = fixed_input(cfg, 13);

  ModelContext ctx(params, true);
  training_loss(params, in, &ctx);
  auto grads = ctx.gradients();
  REQUIRE(grads.size() == params.store.tensors.size());

  std::mt19937_64 rng(55);
  const double h = 1e-6;
  int checked = 0;
  for (auto& [name, value] : params.store.tensors) {
    const Matrix& g = *grads.at(name);
    for (int probe = 0; probe < 2; ++probe) {
      const Eigen::Index r =
          std::uniform_int_distribution<Eigen::Index>(0, value.rows() - 1)(rng);
      const Eigen::Index c =
          std::uniform_int_distribution<Eigen::Index>(0, value.cols() - 1)(rng);
      const double keep = value(r, c);
      value(r, c) = keep + h;
      const double fp = training_loss(params, in);
      value(r, c) = keep - h;
      const double fm = training_loss(params, in);
      value(r, c) = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = g(r, c);
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      CHECK_MESSAGE(err < 1e-4, name, "(", r, ",", c, "): analytic ", an, " vs fd ", fd);
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("parameter init is seed-deterministic") {
  PolicyConfig cfg = tiny_config();
  ModelParams a = init_params(cfg, 42, "x");
  ModelParams b = init_params(cfg, 42, "x");
  ModelParams c = init_params(cfg, 43, "x");
  bool same = true, differs = false;
  for (const auto& [name, m] : a.store.tensors) {
    if (m != b.store.at(name)) same = false;
    if (m != c.store.at(name)) differs = true;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("normalization round trip is exact to 1e-6") {
  NormStats st;
  std::mt19937_64 rng(2);
  const int ch = 15;
  for (int i = 0; i < ch; ++i) {
    st.act_mean.push_back(std::uniform_real_distribution<double>(-1, 1)(rng));
    st.act_std.push_back(std::uniform_real_distribution<double>(0.1, 2.0)(rng));
  }
  Matrix x = random_matrix(4, ch, rng, -3.0, 3.0);
  Matrix back = st.denormalize_actions(st.normalize_actions(x));
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-6);
}

namespace {

Episode synthetic_episode(const PolicyConfig& cfg, const std::string& instr,
                          double torque_level, uint64_t seed) {
  Episode ep;
  ep.task = "cup";
  ep.instruction_raw = instr;
  ep.instruction = instr;
  ep.control_rate = 100;
  ep.image_rate = 100;
  ep.joint_count = cfg.joint_count;
  ep.arm_count = cfg.arm_count;
  ep.seed = seed;
  ep.samples = 30;
  ep.frames = 30;
  const int ch = cfg.obs_dim();
  ep.leader.resize(ep.samples * ch);
  ep.follower.resize(ep.samples * ch);
  for (int64_t t = 0; t < ep.samples; ++t) {
    for (int c = 0; c < ch; ++c) {
      const double base = std::sin(0.1 * t + 0.3 * c);
      ep.leader[t * ch + c] = static_cast<float>(base + (c % 3 == 2 ? torque_level : 0));
      ep.follower[t * ch + c] = static_cast<float>(base * 0.95);
    }
  }
  auto store = std::make_shared<FrameStore>();
  CameraStream cam;
  cam.width = cfg.image_width;
  cam.height = cfg.image_height;
  cam.pixels.assign(cam.frame_bytes() * ep.frames, 0);
  std::mt19937_64 rng(seed);
  for (auto& b : cam.pixels) b = static_cast<uint8_t>(rng() % 256);
  store->cameras.push_back(std::move(cam));
  ep.camera = store;
  return ep;
}

}  // namespace

TEST_CASE("dataset build guards the conditioning preconditions") {
  PolicyConfig cfg = tiny_config();
  std::vector<Episode> eps;
  eps.push_back(synthetic_episode(cfg, "softly grasp the cup", 0.05, 1));
  eps.push_back(synthetic_episode(cfg, "strongly grasp the cup", 0.3, 2));

  EncoderConfig ec;
  ec.kind = "hashed";
  ec.dim = cfg.language_dim;
  ec.seed = 0;
  LanguageEncoder enc(ec, PromptTemplate{});
  Dataset ds = build_dataset(eps, enc, cfg);
  CHECK(ds.total_samples == 60);
  CHECK(ds.encoder_id == "hashed16");
  CHECK(ds.stats.obs_std.size() == static_cast<size_t>(cfg.obs_dim()));
  for (double s : ds.stats.obs_std) CHECK(s >= 1e-6);

  // find a colliding hash seed at this dim to exercise the separation guard
  uint64_t bad_seed = 0;
  bool found = false;
  for (uint64_t s = 0; s < 2000 && !found; ++s) {
    auto a = encode_hashed("softly grasp the cup", 16, s);
    auto b = encode_hashed("strongly grasp the cup", 16, s);
    if (a.values == b.values) {
      bad_seed = s;
      found = true;
    }
  }
  if (found) {
    EncoderConfig bad;
    bad.kind = "hashed";
    bad.dim = cfg.language_dim;
    bad.seed = bad_seed;
    LanguageEncoder bad_enc(bad, PromptTemplate{});
    CHECK_THROWS_WITH_AS(build_dataset(eps, bad_enc, cfg),
                         doctest::Contains("identical embeddings"), std::runtime_error);
  }
}

TEST_CASE("training runs, logs, and reproduces its first epoch bit for bit") {
  PolicyConfig cfg = tiny_config();
  std::vector<Episode> eps;
  eps.push_back(synthetic_episode(cfg, "softly grasp the cup", 0.05, 1));
  eps.push_back(synthetic_episode(cfg, "strongly grasp the cup", 0.3, 2));
  EncoderConfig ec;
  ec.kind = "hashed";
  ec.dim = cfg.language_dim;
  LanguageEncoder enc(ec, PromptTemplate{});
  Dataset ds = build_dataset(eps, enc, cfg);

  TrainSettings ts;
  ts.epochs = 2;
  ts.batch_size = 4;
  ts.steps_per_epoch = 3;
  ts.threads = 2;
  ts.learning_rate = 1e-3;

  TrainResult a = train(ds, cfg, ts, 99);
  REQUIRE(a.log.size() == 2);
  for (const auto& row : a.log) {
    CHECK(std::isfinite(row.recon));
    CHECK(std::isfinite(row.kl));
    CHECK(row.kl >= 0.0);
  }

  TrainResult b = train(ds, cfg, ts, 99);
  CHECK(a.log[0].total == b.log[0].total);  // bit-identical
  CHECK(a.log[1].total == b.log[1].total);

  // single-threaded run reproduces the same trajectory
  ts.threads = 1;
  TrainResult c = train(ds, cfg, ts, 99);
  CHECK(a.log[0].total == c.log[0].total);
  CHECK(a.log[1].total == c.log[1].total);

  SUBCASE("checkpoint round trip and inference determinism") {
    const fs::path dir = fs::temp_directory_path() / "bilat_policy_tests";
    fs::create_directories(dir);
    const fs::path ck = dir / "model.blatm";
    save_checkpoint(a.params, ck);
    ModelParams loaded = load_checkpoint(ck);
    CHECK(loaded.encoder_id == a.params.encoder_id);
    CHECK(loaded.config.model_dim == cfg.model_dim);

    // re-saving what we loaded is byte-identical
    const fs::path ck2 = dir / "model2.blatm";
    save_checkpoint(loaded, ck2);
    std::ifstream f1(ck, std::ios::binary), f2(ck2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    // z = 0 inference is deterministic and rejects mismatched encoders
    std::vector<double> obs(cfg.obs_dim(), 0.1);
    std::vector<Matrix> frames;
    std::mt19937_64 rng(7);
    frames.push_back(random_matrix(3, cfg.image_width * cfg.image_height, rng, 0.0, 1.0));
    LanguageEmbedding emb = enc.encode("softly grasp the cup");
    ModelContext ctx(loaded, false);
    Matrix chunk1 = infer_chunk(ctx, obs, frames, emb);
    Matrix chunk2 = infer_chunk(ctx, obs, frames, emb);
    CHECK(chunk1 == chunk2);
    CHECK(chunk1.rows() == cfg.chunk_size);
    CHECK(chunk1.cols() == cfg.action_dim());

    LanguageEmbedding wrong = emb;
    wrong.encoder_id = "other";
    CHECK_THROWS_AS(infer_chunk(ctx, obs, frames, wrong), std::invalid_argument);
  }
}
