#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "bridgegen/data.hpp"
#include "bridgegen/training.hpp"

using namespace bridgegen;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.T = 20;
  cfg.steps = 6;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  cfg.denoiser.arch = DenoiserArch::mlp;
  cfg.denoiser.latent_dim = 2;
  cfg.denoiser.hidden = 8;
  cfg.denoiser.blocks = 1;
  cfg.denoiser.attn_dim = 8;
  cfg.denoiser.token_dim = 8;
  cfg.denoiser.time_dim = 8;
  cfg.cond.label_vocab = 2;
  cfg.cond.num_classes = 2;
  cfg.cond.token_dim = 8;
  return cfg;
}

std::vector<PairedSample> tiny_dataset(std::size_t n = 16) {
  RngState rng{3, 0};
  return make_pointcloud_dataset(n, rng);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config json round-trips and rejects unknown keys") {
  TrainConfig cfg = tiny_config();
  cfg.weight_mode = WeightMode::inverse_t;
  cfg.codec = CodecMode::linear;
  cfg.codec_latent = {2};
  nlohmann::json j = train_config_to_json(cfg);
  TrainConfig back = train_config_from_json(j);
  REQUIRE(back.T == cfg.T);
  REQUIRE(back.weight_mode == WeightMode::inverse_t);
  REQUIRE(back.codec == CodecMode::linear);
  REQUIRE(back.codec_latent == Shape{2});
  REQUIRE(back.denoiser.hidden == cfg.denoiser.hidden);
  REQUIRE(back.cond.token_dim == cfg.cond.token_dim);

  nlohmann::json bad = j;
  bad["learning_rate"] = 0.1;  // typo for lr
  REQUIRE_THROWS_WITH(train_config_from_json(bad),
                      Catch::Matchers::ContainsSubstring("learning_rate"));

  nlohmann::json bad2 = j;
  bad2["denoiser"]["depth"] = 3;
  REQUIRE_THROWS_AS(train_config_from_json(bad2), ValueError);

  nlohmann::json bad3 = j;
  bad3["lr"] = "fast";
  REQUIRE_THROWS_AS(train_config_from_json(bad3), ValueError);
}

TEST_CASE("config validation catches cross-field mistakes") {
  TrainConfig cfg = tiny_config();
  REQUIRE_NOTHROW(cfg.validate());
  cfg.cond.token_dim = 16;  // denoiser still expects 8
  REQUIRE_THROWS_AS(cfg.validate(), ValueError);

  cfg = tiny_config();
  cfg.grad_clip = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ValueError);
  cfg = tiny_config();
  cfg.T = 1;
  REQUIRE_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("weight mode names round-trip") {
  for (WeightMode m : {WeightMode::uniform, WeightMode::inverse_t, WeightMode::posterior_ceps})
    REQUIRE(weight_mode_from_name(weight_mode_name(m)) == m);
  REQUIRE_THROWS_AS(weight_mode_from_name("quadratic"), ValueError);
}

TEST_CASE("adam takes a signed unit-ish first step and clipping preserves direction") {
  Tensor p = Tensor::zeros({3});
  Tensor g({3}, {0.5, -2.0, 0.0});
  AdamState st;
  std::vector<Tensor*> params{&p};
  st.init_like(params);
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(st, cfg, params, {g});
  // First bias-corrected step is lr * g / (|g| + eps'): sign(g) scaled by lr.
  REQUIRE_THAT(p.data[0], WithinAbs(-0.01, 1e-6));
  REQUIRE_THAT(p.data[1], WithinAbs(0.01, 1e-6));
  REQUIRE_THAT(p.data[2], WithinAbs(0.0, 1e-12));
  REQUIRE(st.t == 1);

  std::vector<Tensor> grads{Tensor({2}, {3.0, 4.0})};
  double norm = clip_global_norm(grads, 1.0);
  REQUIRE_THAT(norm, WithinAbs(5.0, 1e-12));
  REQUIRE_THAT(grads[0].data[0], WithinAbs(0.6, 1e-12));
  REQUIRE_THAT(grads[0].data[1], WithinAbs(0.8, 1e-12));

  std::vector<Tensor> small{Tensor({2}, {0.3, 0.4})};
  REQUIRE_THAT(clip_global_norm(small, 1.0), WithinAbs(0.5, 1e-12));
  REQUIRE(small[0].data == std::vector<double>{0.3, 0.4});
}

TEST_CASE("training loss is finite and feeds every parameter") {
  TrainConfig cfg = tiny_config();
  auto data = tiny_dataset();
  TrainState st = make_train_state(cfg, data);
  auto latents = encode_dataset(st.codec, data);

  std::vector<const LatentSample*> batch;
  for (std::size_t i = 0; i < 8; ++i) batch.push_back(&latents[i]);
  RngState rng{42, 0};
  LossResult lr = training_loss(st.model, st.sched, batch, WeightMode::uniform, true, rng);
  REQUIRE(std::isfinite(lr.loss));
  REQUIRE(lr.loss > 0.0);
  REQUIRE(lr.ts.size() == 8);
  for (int t : lr.ts) {
    REQUIRE(t >= 1);
    REQUIRE(t <= cfg.T - 1);
  }

  std::size_t n_params = 0;
  std::vector<Shape> shapes;
  st.model.visit([&](const std::string&, const Tensor& t) {
    ++n_params;
    shapes.push_back(t.shape);
  });
  REQUIRE(lr.grads.size() == n_params);
  for (std::size_t i = 0; i < n_params; ++i) REQUIRE(lr.grads[i].shape == shapes[i]);

  // With a zero-init head most body gradients vanish, but the head and the
  // loss must still interact: the global norm is strictly positive.
  REQUIRE(global_l2_norm(lr.grads) > 0.0);

  SECTION("per-mode weights change the loss value") {
    RngState r1{42, 0}, r2{42, 0}, r3{42, 0};
    double a = training_loss(st.model, st.sched, batch, WeightMode::uniform, false, r1).loss;
    double b = training_loss(st.model, st.sched, batch, WeightMode::inverse_t, false, r2).loss;
    double c = training_loss(st.model, st.sched, batch, WeightMode::posterior_ceps, false, r3).loss;
    // same step draws and noise, different weights
    REQUIRE(a != b);
    REQUIRE(a != c);
    REQUIRE(b > a);  // 1/t weights only inflate (T/t >= 1)
  }

  SECTION("non-finite forward values raise with the offending steps listed") {
    TrainState bad = make_train_state(cfg, data);
    for (double& v : bad.model.den.stem_w.data) v = 1e200;
    for (double& v : bad.model.den.head_w.data) v = 1e200;
    RngState r{42, 0};
    REQUIRE_THROWS_WITH(
        training_loss(bad.model, bad.sched, batch, WeightMode::uniform, false, r),
        Catch::Matchers::ContainsSubstring("batch steps"));
  }
}

TEST_CASE("after optimizer steps the model moves and the loss stays finite") {
  TrainConfig cfg = tiny_config();
  auto data = tiny_dataset();
  TrainState st = make_train_state(cfg, data);
  auto latents = encode_dataset(st.codec, data);
  Tensor before = st.model.den.head_w;
  for (int i = 0; i < 3; ++i) {
    StepMetrics m = train_step(st, latents);
    REQUIRE(std::isfinite(m.loss));
    REQUIRE(m.grad_norm >= 0.0);
    REQUIRE(m.step == static_cast<std::uint64_t>(i + 1));
  }
  REQUIRE(st.model.den.head_w.data != before.data);
  REQUIRE(st.adam.t == 3);
}

TEST_CASE("checkpoints reload to the identical state") {
  TempDir tmp("ckpt_identity");
  TrainConfig cfg = tiny_config();
  auto data = tiny_dataset();
  TrainState st = make_train_state(cfg, data);
  auto latents = encode_dataset(st.codec, data);
  for (int i = 0; i < 4; ++i) train_step(st, latents);

  std::string p1 = (tmp.path / "a.bbck").string();
  save_checkpoint(p1, st);
  TrainState back = load_checkpoint(p1);
  REQUIRE(back.step == st.step);
  REQUIRE(back.rng.seed == st.rng.seed);
  REQUIRE(back.rng.stream == st.rng.stream);
  REQUIRE(back.adam.t == st.adam.t);
  REQUIRE(back.cfg.T == cfg.T);

  std::string p2 = (tmp.path / "b.bbck").string();
  save_checkpoint(p2, back);
  REQUIRE(read_file(p1) == read_file(p2));  // byte-identical re-save

  SECTION("truncated checkpoints are io errors") {
    std::string bytes = read_file(p1);
    std::string p3 = (tmp.path / "cut.bbck").string();
    std::ofstream os(p3, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    os.close();
    REQUIRE_THROWS_AS(load_checkpoint(p3), IoError);
  }
}

TEST_CASE("resumed training is bit-identical to an uninterrupted run") {
  TempDir tmp("resume_split");
  TrainConfig cfg = tiny_config();
  auto data = tiny_dataset();

  // one shot: 6 steps
  TrainState full = make_train_state(cfg, data);
  auto latents = encode_dataset(full.codec, data);
  for (int i = 0; i < 6; ++i) train_step(full, latents);
  std::string pfull = (tmp.path / "full.bbck").string();
  save_checkpoint(pfull, full);

  // split: 3 steps, checkpoint, reload, 3 more
  TrainState head = make_train_state(cfg, data);
  for (int i = 0; i < 3; ++i) train_step(head, latents);
  std::string pmid = (tmp.path / "mid.bbck").string();
  save_checkpoint(pmid, head);
  TrainState tail = load_checkpoint(pmid);
  for (int i = 0; i < 3; ++i) train_step(tail, latents);
  std::string psplit = (tmp.path / "split.bbck").string();
  save_checkpoint(psplit, tail);

  REQUIRE(read_file(pfull) == read_file(psplit));
}

TEST_CASE("run_training writes metrics, checkpoints, and a nan dump on failure") {
  TempDir tmp("run_training");
  TrainConfig cfg = tiny_config();
  cfg.checkpoint_every = 2;
  auto data = tiny_dataset();
  TrainState st = make_train_state(cfg, data);
  auto latents = encode_dataset(st.codec, data);
  auto metrics = run_training(st, latents, (tmp.path / "out").string());
  REQUIRE(metrics.size() == 6);
  REQUIRE(fs::exists(tmp.path / "out" / "metrics.csv"));
  REQUIRE(fs::exists(tmp.path / "out" / "checkpoint_2.bbck"));
  REQUIRE(fs::exists(tmp.path / "out" / "checkpoint_4.bbck"));
  REQUIRE(fs::exists(tmp.path / "out" / "checkpoint_final.bbck"));
  REQUIRE_FALSE(fs::exists(tmp.path / "out" / "checkpoint_6.bbck"));  // final covers it

  std::string csv = read_file((tmp.path / "out" / "metrics.csv").string());
  REQUIRE(csv.rfind("step,loss,grad_norm\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 7);

  SECTION("poisoned state dumps diagnostics and rethrows") {
    TrainState bad = make_train_state(cfg, data);
    for (double& v : bad.model.den.stem_w.data) v = 1e200;
    for (double& v : bad.model.den.head_w.data) v = 1e200;
    REQUIRE_THROWS_AS(run_training(bad, latents, (tmp.path / "bad").string()), ValueError);
    REQUIRE(fs::exists(tmp.path / "bad" / "nan_dump.json"));
  }
}

TEST_CASE("encode_dataset maps through the codec and keeps conditions") {
  auto data = tiny_dataset(8);
  CodecParams ident = make_identity_codec({2});
  auto latents = encode_dataset(ident, data);
  REQUIRE(latents.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    REQUIRE(latents[i].z_a.data == data[i].pre.data);
    REQUIRE(latents[i].z_b.data == data[i].post.data);
    REQUIRE(latents[i].cond.kind == CondKind::label);
  }

  RngState rng{5, 0};
  CodecParams lin = init_linear_codec(rng, {2}, {1});
  auto lat2 = encode_dataset(lin, data);
  REQUIRE(lat2[0].z_a.shape == Shape{1});
}
