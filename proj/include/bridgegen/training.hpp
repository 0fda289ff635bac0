#pragma once

// Training pipeline: config (strict JSON), the regression loss on random
// interior steps, the optimizer loop with global-norm clipping, metrics
// rows, and full-state checkpoints (BBCK1: magic, u64 manifest length, JSON
// manifest, then one BBT1 blob per named tensor) that make a resumed run
// bit-identical to an uninterrupted one.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgegen/bridge.hpp"
#include "bridgegen/codec.hpp"
#include "bridgegen/data.hpp"
#include "bridgegen/denoiser.hpp"
#include "bridgegen/optim.hpp"
#include "bridgegen/schedule.hpp"

namespace bridgegen {

enum class WeightMode { uniform, inverse_t, posterior_ceps };

inline std::string weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::uniform: return "uniform";
    case WeightMode::inverse_t: return "inverse_t";
    case WeightMode::posterior_ceps: return "posterior_ceps";
  }
  throw ValueError("unknown weight mode");
}

inline WeightMode weight_mode_from_name(const std::string& name) {
  if (name == "uniform") return WeightMode::uniform;
  if (name == "inverse_t") return WeightMode::inverse_t;
  if (name == "posterior_ceps") return WeightMode::posterior_ceps;
  throw ValueError("unknown weight mode: " + name);
}

struct TrainConfig {
  int T = 1000;
  double s = 1.0;
  int steps = 2000;
  int batch = 64;
  double lr = 1.0e-3;
  WeightMode weight_mode = WeightMode::uniform;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  CodecMode codec = CodecMode::identity;
  Shape codec_latent;        // empty = derive from data shape
  int codec_steps = 2000;
  double codec_lr = 1.0e-2;
  int codec_batch = 32;
  DenoiserConfig denoiser;
  CondEncoderConfig cond;

  void validate() const {
    if (T < 2) throw ValueError("config: T must be >= 2");
    if (!(s > 0.0)) throw ValueError("config: s must be positive");
    if (steps < 1) throw ValueError("config: steps must be >= 1");
    if (batch < 1) throw ValueError("config: batch must be >= 1");
    if (!(lr > 0.0)) throw ValueError("config: lr must be positive");
    if (!(grad_clip > 0.0)) throw ValueError("config: grad_clip must be positive");
    if (checkpoint_every < 0) throw ValueError("config: checkpoint_every must be >= 0");
    if (codec == CodecMode::linear && (codec_steps < 1 || !(codec_lr > 0.0) || codec_batch < 1))
      throw ValueError("config: bad linear codec training settings");
    denoiser.validate();
    cond.validate();
    if (cond.token_dim != denoiser.token_dim)
      throw ValueError("config: cond.token_dim must match denoiser.token_dim");
  }
};

// ---- strict JSON (unknown keys are errors) ----

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& where) {
  if (!j.is_object()) throw ValueError("config: " + where + " must be a JSON object");
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw ValueError("config: unknown key '" + item.key() + "' in " + where);
}

template <typename T>
inline void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValueError(std::string("config: bad value type for '") + key + "'");
  }
}

}  // namespace detail

inline nlohmann::json denoiser_config_to_json(const DenoiserConfig& c) {
  nlohmann::json j;
  j["arch"] = denoiser_arch_name(c.arch);
  j["latent_dim"] = c.latent_dim;
  j["hidden"] = c.hidden;
  j["blocks"] = c.blocks;
  j["attn_dim"] = c.attn_dim;
  j["token_dim"] = c.token_dim;
  j["time_dim"] = c.time_dim;
  j["img_h"] = c.img_h;
  j["img_w"] = c.img_w;
  j["img_c"] = c.img_c;
  return j;
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"arch", "latent_dim", "hidden", "blocks", "attn_dim", "token_dim",
                               "time_dim", "img_h", "img_w", "img_c"},
                              "denoiser");
  DenoiserConfig c;
  std::string arch = denoiser_arch_name(c.arch);
  detail::maybe_get(j, "arch", arch);
  c.arch = denoiser_arch_from_name(arch);
  detail::maybe_get(j, "latent_dim", c.latent_dim);
  detail::maybe_get(j, "hidden", c.hidden);
  detail::maybe_get(j, "blocks", c.blocks);
  detail::maybe_get(j, "attn_dim", c.attn_dim);
  detail::maybe_get(j, "token_dim", c.token_dim);
  detail::maybe_get(j, "time_dim", c.time_dim);
  detail::maybe_get(j, "img_h", c.img_h);
  detail::maybe_get(j, "img_w", c.img_w);
  detail::maybe_get(j, "img_c", c.img_c);
  return c;
}

inline nlohmann::json cond_config_to_json(const CondEncoderConfig& c) {
  nlohmann::json j;
  j["label_vocab"] = c.label_vocab;
  j["num_classes"] = c.num_classes;
  j["patch"] = c.patch;
  j["token_dim"] = c.token_dim;
  return j;
}

inline CondEncoderConfig cond_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"label_vocab", "num_classes", "patch", "token_dim"}, "cond");
  CondEncoderConfig c;
  detail::maybe_get(j, "label_vocab", c.label_vocab);
  detail::maybe_get(j, "num_classes", c.num_classes);
  detail::maybe_get(j, "patch", c.patch);
  detail::maybe_get(j, "token_dim", c.token_dim);
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["T"] = c.T;
  j["s"] = c.s;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["weight_mode"] = weight_mode_name(c.weight_mode);
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["codec"] = codec_mode_name(c.codec);
  j["codec_latent"] = c.codec_latent;
  j["codec_steps"] = c.codec_steps;
  j["codec_lr"] = c.codec_lr;
  j["codec_batch"] = c.codec_batch;
  j["denoiser"] = denoiser_config_to_json(c.denoiser);
  j["cond"] = cond_config_to_json(c.cond);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"T", "s", "steps", "batch", "lr", "weight_mode", "grad_clip", "seed", "checkpoint_every",
       "codec", "codec_latent", "codec_steps", "codec_lr", "codec_batch", "denoiser", "cond"},
      "config");
  TrainConfig c;
  detail::maybe_get(j, "T", c.T);
  detail::maybe_get(j, "s", c.s);
  detail::maybe_get(j, "steps", c.steps);
  detail::maybe_get(j, "batch", c.batch);
  detail::maybe_get(j, "lr", c.lr);
  if (j.contains("weight_mode"))
    c.weight_mode = weight_mode_from_name(j.at("weight_mode").get<std::string>());
  detail::maybe_get(j, "grad_clip", c.grad_clip);
  detail::maybe_get(j, "seed", c.seed);
  detail::maybe_get(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("codec")) c.codec = codec_mode_from_name(j.at("codec").get<std::string>());
  detail::maybe_get(j, "codec_latent", c.codec_latent);
  detail::maybe_get(j, "codec_steps", c.codec_steps);
  detail::maybe_get(j, "codec_lr", c.codec_lr);
  detail::maybe_get(j, "codec_batch", c.codec_batch);
  if (j.contains("denoiser")) c.denoiser = denoiser_config_from_json(j.at("denoiser"));
  if (j.contains("cond")) c.cond = cond_config_from_json(j.at("cond"));
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ValueError("config: invalid JSON in " + path);
  TrainConfig c = train_config_from_json(j);
  c.validate();
  return c;
}

// ---- model = denoiser + condition encoder, trained jointly ----

struct ModelParams {
  DenoiserParams den;
  CondEncoderParams cond;

  template <typename Fn>
  void visit(Fn&& fn) {
    den.visit(fn);
    cond.visit(fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    den.visit(fn);
    cond.visit(fn);
  }

  std::vector<Tensor*> tensor_ptrs() {
    std::vector<Tensor*> out;
    visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }
};

inline ModelParams init_model(RngState& rng, const DenoiserConfig& dcfg,
                              const CondEncoderConfig& ccfg) {
  ModelParams m;
  m.den = init_denoiser(rng, dcfg);
  m.cond = init_cond_encoder(rng, ccfg);
  return m;
}

// ---- latent-space dataset ----

struct LatentSample {
  Tensor z_a;  // encoded pre (anchor at t = T)
  Tensor z_b;  // encoded post (target at t = 0)
  ConditionPayload cond;
};

inline std::vector<LatentSample> encode_dataset(const CodecParams& codec,
                                                const std::vector<PairedSample>& data) {
  std::vector<LatentSample> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    LatentSample l;
    l.z_a = codec_encode(codec, s.pre);
    l.z_b = codec_encode(codec, s.post);
    l.cond = s.cond;
    out.push_back(std::move(l));
  }
  return out;
}

namespace detail {

inline Tensor stack_latents(const std::vector<const Tensor*>& xs, const DenoiserConfig& cfg) {
  std::size_t b = xs.size();
  if (cfg.arch == DenoiserArch::mlp) {
    std::size_t d = static_cast<std::size_t>(cfg.latent_dim);
    Tensor out = Tensor::zeros({b, d});
    for (std::size_t i = 0; i < b; ++i) {
      if (xs[i]->size() != d) throw ValueError("latent does not match denoiser latent_dim");
      std::copy_n(xs[i]->data.data(), d, out.data.data() + i * d);
    }
    return out;
  }
  std::size_t c = static_cast<std::size_t>(cfg.img_c);
  std::size_t h = static_cast<std::size_t>(cfg.img_h);
  std::size_t w = static_cast<std::size_t>(cfg.img_w);
  Tensor out = Tensor::zeros({b, c, h, w});
  for (std::size_t i = 0; i < b; ++i) {
    bool ok = (xs[i]->rank() == 3 && xs[i]->shape == Shape{c, h, w}) ||
              (xs[i]->rank() == 2 && c == 1 && xs[i]->shape == Shape{h, w});
    if (!ok) throw ValueError("latent does not match denoiser image geometry");
    std::copy_n(xs[i]->data.data(), c * h * w, out.data.data() + i * c * h * w);
  }
  return out;
}

}  // namespace detail

// Batched tape-side token encoding. All payloads in a batch must share one
// condition kind; gradients flow into the embedding tables.
inline ad::Var encode_condition_batch(ad::Tape& t, const ParamVarMap& pv,
                                      const CondEncoderConfig& cfg,
                                      const std::vector<const ConditionPayload*>& batch) {
  if (batch.empty()) throw ValueError("encode_condition_batch: empty batch");
  CondKind kind = batch[0]->kind;
  for (const auto* p : batch)
    if (p->kind != kind)
      throw ValueError("encode_condition_batch: a batch must hold a single condition kind");
  std::size_t b = batch.size();
  std::size_t d = static_cast<std::size_t>(cfg.token_dim);

  switch (kind) {
    case CondKind::label: {
      std::vector<std::size_t> idx(b);
      for (std::size_t i = 0; i < b; ++i) {
        int label = batch[i]->label;
        if (label < 0 || label >= cfg.label_vocab)
          throw ValueError("encode_condition_batch: label outside vocab");
        idx[i] = static_cast<std::size_t>(label);
      }
      return t.reshape(t.gather_rows(detail::pv_get(pv, "cond.label_table"), idx), {b, 1, d});
    }
    case CondKind::layout:
    case CondKind::semantic: {
      const Shape& ms = batch[0]->map.shape;
      std::size_t kk = static_cast<std::size_t>(cfg.num_classes);
      int gh = static_cast<int>(ms[0]) / cfg.patch;
      int gw = static_cast<int>(ms[1]) / cfg.patch;
      Tensor pos = patch_position_code(gh, gw, cfg.token_dim);
      std::size_t m = pos.shape[0];
      Tensor hist = Tensor::zeros({b, m, kk});
      Tensor pos_tiled = Tensor::zeros({b, m, d});
      for (std::size_t i = 0; i < b; ++i) {
        if (batch[i]->map.shape != ms)
          throw ValueError("encode_condition_batch: mixed map geometry in batch");
        if (batch[i]->num_classes > cfg.num_classes)
          throw ValueError("encode_condition_batch: payload has more classes than the table");
        Tensor hi = patch_histograms(batch[i]->map, cfg.patch, cfg.num_classes);
        std::copy_n(hi.data.data(), m * kk, hist.data.data() + i * m * kk);
        std::copy_n(pos.data.data(), m * d, pos_tiled.data.data() + i * m * d);
      }
      ad::Var content =
          t.matmul(t.constant(std::move(hist)), detail::pv_get(pv, "cond.class_table"));
      return t.add(content, t.constant(std::move(pos_tiled)));
    }
    case CondKind::none: {
      std::vector<std::size_t> idx(b, 0);
      return t.reshape(t.gather_rows(detail::pv_get(pv, "cond.null_token"), idx), {b, 1, d});
    }
  }
  throw ValueError("encode_condition_batch: unknown condition kind");
}

// ---- loss ----

struct LossResult {
  double loss = 0.0;
  std::vector<Tensor> grads;  // parameter visitation order; empty if not requested
  std::vector<int> ts;        // per-sample step draws (diagnostics)
};

// Samples one interior step per record, forms the marginal draw and its
// regression target, and evaluates the weighted batch MSE.
inline LossResult training_loss(const ModelParams& model, const BridgeSchedule& sched,
                                const std::vector<const LatentSample*>& batch, WeightMode mode,
                                bool want_grads, RngState& rng) {
  if (batch.empty()) throw ValueError("training_loss: empty batch");
  const DenoiserConfig& cfg = model.den.cfg;
  std::size_t b = batch.size();

  std::vector<Tensor> zts(b), targets(b);
  std::vector<int> ts(b);
  std::vector<double> weights(b, 1.0);
  std::vector<const Tensor*> zt_ptrs(b), za_ptrs(b), tg_ptrs(b);
  std::vector<const ConditionPayload*> conds(b);
  for (std::size_t i = 0; i < b; ++i) {
    const LatentSample& s = *batch[i];
    require_same_shape(s.z_a, s.z_b, "training_loss");
    int t = 1 + static_cast<int>(next_u64(rng) % static_cast<std::uint64_t>(sched.T - 1));
    ts[i] = t;
    auto [z_t, eps] = forward_marginal_sample(sched, s.z_b, s.z_a, t, rng);
    zts[i] = std::move(z_t);
    targets[i] = network_target(sched, s.z_b, s.z_a, t, eps);
    if (mode == WeightMode::inverse_t)
      weights[i] = static_cast<double>(sched.T) / static_cast<double>(t);
    else if (mode == WeightMode::posterior_ceps) {
      StepCoefficients c = posterior_coefficients(sched, t, t - 1);
      weights[i] = c.c_eps * c.c_eps;
    }
    zt_ptrs[i] = &zts[i];
    za_ptrs[i] = &s.z_a;
    tg_ptrs[i] = &targets[i];
    conds[i] = &s.cond;
  }

  ad::Tape tape;
  ParamVarMap pv = bind_params(tape, model, want_grads);
  ad::Var zt = tape.constant(detail::stack_latents(zt_ptrs, cfg));
  ad::Var za = tape.constant(detail::stack_latents(za_ptrs, cfg));
  ad::Var target = tape.constant(detail::stack_latents(tg_ptrs, cfg));
  ad::Var cond = encode_condition_batch(tape, pv, model.cond.cfg, conds);
  ad::Var pred = denoiser_forward(tape, pv, cfg, zt, za, ts, cond);
  ad::Var loss = tape.weighted_mse(pred, target, weights);

  LossResult out;
  out.loss = tape.val(loss)[0];
  out.ts = std::move(ts);
  if (std::isnan(out.loss) || std::isinf(out.loss)) {
    std::string steps_str;
    for (int t : out.ts) steps_str += std::to_string(t) + " ";
    throw ValueError("training_loss: non-finite loss; batch steps: " + steps_str);
  }
  if (want_grads) {
    tape.backward(loss);
    model.visit([&](const std::string& name, const Tensor&) {
      out.grads.push_back(tape.grad(detail::pv_get(pv, name)));
    });
  }
  return out;
}

// ---- train state, steps, checkpoints ----

struct TrainState {
  TrainConfig cfg;
  BridgeSchedule sched;
  CodecParams codec;
  ModelParams model;
  AdamState adam;
  RngState rng;  // noise/step-draw stream; advances once per training step
  std::uint64_t step = 0;
};

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based step index after the update
  double loss = 0.0;
  double grad_norm = 0.0;  // pre-clip global L2 norm
};

namespace detail {

inline std::uint64_t shuffle_seed(std::uint64_t seed) {
  return mix64(seed ^ 0xB5F00D5EEDULL);
}

inline Shape default_latent_shape(const Shape& data_shape) {
  if (data_shape.size() == 1) return {std::max<std::size_t>(1, data_shape[0] / 4)};
  Shape out = data_shape;
  std::size_t h = out[out.size() - 2], w = out[out.size() - 1];
  if (h % 2 != 0 || w % 2 != 0)
    throw ValueError("linear codec: spatial dims must be even to derive a latent shape");
  out[out.size() - 2] = h / 2;
  out[out.size() - 1] = w / 2;
  return out;
}

}  // namespace detail

// Builds a fresh training state: trains the codec if one is configured,
// checks latent geometry against the denoiser, and initializes the model.
inline TrainState make_train_state(const TrainConfig& cfg,
                                   const std::vector<PairedSample>& data) {
  cfg.validate();
  if (data.empty()) throw ValueError("make_train_state: dataset is empty");
  if (static_cast<std::size_t>(cfg.batch) > data.size())
    throw ValueError("make_train_state: batch size exceeds dataset size");
  TrainState st;
  st.cfg = cfg;
  st.sched = build_schedule(cfg.T, cfg.s);

  RngState master{cfg.seed, 0};
  auto [rng_init, rng_codec] = split_rng(master);
  auto [rng_noise, rng_spare] = split_rng(master);
  (void)rng_spare;

  const Shape& data_shape = data[0].pre.shape;
  for (const auto& s : data)
    if (s.pre.shape != data_shape || s.post.shape != data_shape)
      throw ValueError("make_train_state: dataset tensors must share one shape");

  if (cfg.codec == CodecMode::identity) {
    st.codec = make_identity_codec(data_shape);
  } else {
    Shape latent =
        cfg.codec_latent.empty() ? detail::default_latent_shape(data_shape) : cfg.codec_latent;
    st.codec = init_linear_codec(rng_codec, data_shape, latent);
    std::vector<Tensor> pool;
    pool.reserve(2 * data.size());
    for (const auto& s : data) {
      pool.push_back(s.pre);
      pool.push_back(s.post);
    }
    CodecTrainConfig ccfg;
    ccfg.steps = cfg.codec_steps;
    ccfg.lr = cfg.codec_lr;
    ccfg.batch = cfg.codec_batch;
    train_codec(st.codec, pool, ccfg, rng_codec);
  }

  // Latent geometry must line up with the denoiser body.
  std::size_t latent_numel = shape_numel(st.codec.latent_shape);
  if (cfg.denoiser.arch == DenoiserArch::mlp) {
    if (latent_numel != static_cast<std::size_t>(cfg.denoiser.latent_dim))
      throw ValueError("make_train_state: codec latent size does not match denoiser latent_dim");
  } else {
    const Shape& ls = st.codec.latent_shape;
    bool ok = (ls.size() == 2 && cfg.denoiser.img_c == 1 &&
               ls == Shape{static_cast<std::size_t>(cfg.denoiser.img_h),
                           static_cast<std::size_t>(cfg.denoiser.img_w)}) ||
              (ls.size() == 3 && ls == Shape{static_cast<std::size_t>(cfg.denoiser.img_c),
                                             static_cast<std::size_t>(cfg.denoiser.img_h),
                                             static_cast<std::size_t>(cfg.denoiser.img_w)});
    if (!ok)
      throw ValueError("make_train_state: codec latent shape does not match denoiser geometry");
  }

  st.model = init_model(rng_init, cfg.denoiser, cfg.cond);
  st.adam.init_like(st.model.tensor_ptrs());
  st.rng = rng_noise;
  st.step = 0;
  return st;
}

// One optimizer update; batch selection is a pure function of (seed, step).
inline StepMetrics train_step(TrainState& st, const std::vector<LatentSample>& latents) {
  std::vector<std::size_t> idx =
      batch_indices(latents.size(), static_cast<std::size_t>(st.cfg.batch),
                    detail::shuffle_seed(st.cfg.seed), st.step);
  std::vector<const LatentSample*> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(&latents[i]);

  LossResult lr = training_loss(st.model, st.sched, batch, st.cfg.weight_mode, true, st.rng);
  double norm = clip_global_norm(lr.grads, st.cfg.grad_clip);
  AdamConfig acfg;
  acfg.lr = st.cfg.lr;
  adam_step(st.adam, acfg, st.model.tensor_ptrs(), lr.grads);
  st.step += 1;
  return StepMetrics{st.step, lr.loss, norm};
}

// ---- checkpoint ----

inline void save_checkpoint(const std::string& path, const TrainState& st) {
  std::vector<std::pair<std::string, const Tensor*>> named;
  st.model.visit(
      [&](const std::string& name, const Tensor& t) { named.emplace_back(name, &t); });
  std::size_t n_model = named.size();
  if (st.adam.m.size() != n_model || st.adam.v.size() != n_model)
    throw ValueError("save_checkpoint: optimizer state does not match model");
  for (std::size_t i = 0; i < n_model; ++i)
    named.emplace_back("adam.m." + named[i].first, &st.adam.m[i]);
  for (std::size_t i = 0; i < n_model; ++i)
    named.emplace_back("adam.v." + named[i].first, &st.adam.v[i]);
  st.codec.visit(
      [&](const std::string& name, const Tensor& t) { named.emplace_back(name, &t); });

  std::string blobs;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, tensor] : named) {
    std::string bytes = tensor_to_bytes(*tensor);
    nlohmann::json e;
    e["name"] = name;
    e["offset"] = blobs.size();
    e["size"] = bytes.size();
    tensors.push_back(std::move(e));
    blobs += bytes;
  }

  nlohmann::json manifest;
  manifest["format"] = "BBCK1";
  manifest["version"] = 1;
  manifest["step"] = st.step;
  manifest["adam_t"] = st.adam.t;
  manifest["rng"] = {{"seed", st.rng.seed}, {"stream", st.rng.stream}};
  manifest["config"] = train_config_to_json(st.cfg);
  manifest["codec"] = {{"mode", codec_mode_name(st.codec.mode)},
                       {"data_shape", st.codec.data_shape},
                       {"latent_shape", st.codec.latent_shape}};
  manifest["tensors"] = std::move(tensors);
  std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  detail::write_bytes(os, "BBCK1", 5);
  detail::write_u64(os, mtext.size());
  detail::write_bytes(os, mtext.data(), mtext.size());
  detail::write_bytes(os, blobs.data(), blobs.size());
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

inline TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  detail::read_bytes(is, magic, 5);
  if (std::memcmp(magic, "BBCK1", 5) != 0) throw IoError("bad checkpoint magic in " + path);
  std::uint64_t mlen = detail::read_u64(is);
  if (mlen == 0 || mlen > (1ull << 30)) throw IoError("bad manifest length in " + path);
  std::string mtext(mlen, '\0');
  detail::read_bytes(is, mtext.data(), mlen);
  nlohmann::json manifest = nlohmann::json::parse(mtext, nullptr, false);
  if (manifest.is_discarded()) throw IoError("bad manifest JSON in " + path);
  if (manifest.value("format", "") != "BBCK1" || manifest.value("version", 0) != 1)
    throw IoError("unsupported checkpoint format in " + path);

  TrainState st;
  try {
    st.cfg = train_config_from_json(manifest.at("config"));
    st.cfg.validate();
  } catch (const ValueError& e) {
    throw IoError("invalid config in checkpoint " + path + ": " + e.what());
  }
  st.sched = build_schedule(st.cfg.T, st.cfg.s);
  st.step = manifest.value("step", std::uint64_t{0});
  st.rng.seed = manifest.at("rng").value("seed", std::uint64_t{0});
  st.rng.stream = manifest.at("rng").value("stream", std::uint64_t{0});

  const auto& cj = manifest.at("codec");
  CodecMode cmode = codec_mode_from_name(cj.value("mode", ""));
  Shape dshape = cj.at("data_shape").get<Shape>();
  Shape lshape = cj.at("latent_shape").get<Shape>();
  if (cmode == CodecMode::identity) {
    st.codec = make_identity_codec(dshape);
  } else {
    RngState dummy{0, 0};
    st.codec = init_linear_codec(dummy, dshape, lshape);
  }

  RngState dummy{0, 0};
  st.model = init_model(dummy, st.cfg.denoiser, st.cfg.cond);
  st.adam.t = manifest.value("adam_t", std::uint64_t{0});
  st.adam.init_like(st.model.tensor_ptrs());
  st.adam.t = manifest.value("adam_t", std::uint64_t{0});

  // Index blob table, then fill every tensor by name.
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> table;
  for (const auto& e : manifest.at("tensors"))
    table[e.at("name").get<std::string>()] = {e.at("offset").get<std::uint64_t>(),
                                              e.at("size").get<std::uint64_t>()};
  std::string blobs((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  auto fill = [&](const std::string& name, Tensor& dst) {
    auto it = table.find(name);
    if (it == table.end()) throw IoError("checkpoint missing tensor: " + name);
    auto [off, sz] = it->second;
    if (off + sz > blobs.size()) throw IoError("checkpoint blob out of range: " + name);
    std::istringstream bs(blobs.substr(off, sz), std::ios::binary);
    Tensor t = read_tensor(bs);
    if (t.shape != dst.shape)
      throw IoError("checkpoint tensor shape mismatch for " + name + ": stored " +
                    shape_to_string(t.shape) + ", expected " + shape_to_string(dst.shape));
    dst = std::move(t);
  };

  std::size_t slot = 0;
  std::vector<std::string> names;
  st.model.visit([&](const std::string& name, Tensor& t) {
    fill(name, t);
    names.push_back(name);
  });
  for (const std::string& name : names) fill("adam.m." + name, st.adam.m[slot]), ++slot;
  slot = 0;
  for (const std::string& name : names) fill("adam.v." + name, st.adam.v[slot]), ++slot;
  st.codec.visit([&](const std::string& name, Tensor& t) { fill(name, t); });
  return st;
}

// ---- driver ----

inline void append_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows) {
  bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("cannot open for writing: " + path);
  if (fresh) os << "step,loss,grad_norm\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%.17g,%.17g\n", r.step, r.loss, r.grad_norm);
    os << buf;
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

// Runs st until cfg.steps, appending metrics and writing checkpoints under
// out_dir. On a non-finite loss the offending batch description is dumped
// to out_dir/nan_dump.json and the error rethrown.
inline std::vector<StepMetrics> run_training(TrainState& st,
                                             const std::vector<LatentSample>& latents,
                                             const std::string& out_dir,
                                             std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<StepMetrics> metrics;
  std::string csv = (fs::path(out_dir) / "metrics.csv").string();
  while (st.step < static_cast<std::uint64_t>(st.cfg.steps)) {
    StepMetrics m;
    try {
      m = train_step(st, latents);
    } catch (const ValueError& e) {
      nlohmann::json dump;
      dump["step"] = st.step;
      dump["error"] = e.what();
      dump["rng"] = {{"seed", st.rng.seed}, {"stream", st.rng.stream}};
      std::ofstream ds((fs::path(out_dir) / "nan_dump.json").string());
      ds << dump.dump(2) << "\n";
      throw;
    }
    metrics.push_back(m);
    if (log && (m.step % 100 == 0 || m.step == static_cast<std::uint64_t>(st.cfg.steps)))
      (*log) << "step " << m.step << " loss " << m.loss << " grad_norm " << m.grad_norm << "\n";
    if (st.cfg.checkpoint_every > 0 &&
        m.step % static_cast<std::uint64_t>(st.cfg.checkpoint_every) == 0 &&
        m.step != static_cast<std::uint64_t>(st.cfg.steps))
      save_checkpoint((fs::path(out_dir) / ("checkpoint_" + std::to_string(m.step) + ".bbck"))
                          .string(),
                      st);
  }
  append_metrics_csv(csv, metrics);
  save_checkpoint((fs::path(out_dir) / "checkpoint_final.bbck").string(), st);
  return metrics;
}

}  // namespace bridgegen
