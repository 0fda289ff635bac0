#pragma once

// Residual predictor networks. Two bodies share one interface:
//   mlp  - for flat latents: stem -> [FiLM, dense pair, residual,
//          cross-attention] x blocks -> zero-init head
//   conv - for image latents: 3-level U-Net (16x16 -> 8x8 -> 4x4 for a
//          16x16 input) with time FiLM in every residual block and
//          cross-attention at the bottleneck and each decoder level.
// Both consume the current latent, the post-event latent, the step index
// (as a sinusoidal embedding) and condition tokens. Attention sites add
// their output back without an output projection, so the per-site
// attention width always equals the width of the stream it feeds.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bridgegen/autodiff.hpp"
#include "bridgegen/bridge.hpp"
#include "bridgegen/conditioning.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/schedule.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen {

enum class DenoiserArch { mlp, conv };

inline std::string denoiser_arch_name(DenoiserArch a) {
  return a == DenoiserArch::mlp ? "mlp" : "conv";
}

inline DenoiserArch denoiser_arch_from_name(const std::string& name) {
  if (name == "mlp") return DenoiserArch::mlp;
  if (name == "conv") return DenoiserArch::conv;
  throw ValueError("unknown denoiser arch: " + name);
}

struct DenoiserConfig {
  DenoiserArch arch = DenoiserArch::mlp;
  int latent_dim = 2;   // mlp: flat latent width
  int hidden = 64;      // mlp width / conv base channels
  int blocks = 2;       // mlp residual block count (conv topology is fixed)
  int attn_dim = 64;
  int token_dim = 16;   // width of incoming condition tokens
  int time_dim = 32;
  int img_h = 0, img_w = 0, img_c = 0;  // conv latent geometry

  void validate() const {
    if (hidden < 1) throw ValueError("denoiser: hidden must be >= 1");
    if (token_dim < 1) throw ValueError("denoiser: token_dim must be >= 1");
    if (time_dim < 2 || time_dim % 2 != 0)
      throw ValueError("denoiser: time_dim must be an even number >= 2");
    if (arch == DenoiserArch::mlp) {
      if (latent_dim < 1) throw ValueError("denoiser: latent_dim must be >= 1");
      if (blocks < 1) throw ValueError("denoiser: blocks must be >= 1");
      if (attn_dim != hidden)
        throw ValueError("denoiser: mlp attention adds into the hidden stream, "
                         "so attn_dim must equal hidden");
    } else {
      if (img_c < 1) throw ValueError("denoiser: img_c must be >= 1");
      if (img_h < 4 || img_w < 4 || img_h % 4 != 0 || img_w % 4 != 0)
        throw ValueError("denoiser: conv latents need H, W divisible by 4");
      if (attn_dim != 4 * hidden)
        throw ValueError("denoiser: conv bottleneck attention adds into a 4*hidden "
                         "stream, so attn_dim must equal 4*hidden");
    }
  }
};

// Interleaved sinusoidal step embedding: pair k of an even-width vector is
// [sin(t / w_k), cos(t / w_k)] with wavelengths geometric from 1 to 1e4.
inline Tensor time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw ValueError("time_embedding: dim must be an even number >= 2");
  std::size_t q = static_cast<std::size_t>(dim) / 2;
  Tensor out = Tensor::zeros({static_cast<std::size_t>(dim)});
  for (std::size_t k = 0; k < q; ++k) {
    double wav =
        std::pow(1.0e4, q == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(q - 1));
    out.data[2 * k + 0] = std::sin(static_cast<double>(t) / wav);
    out.data[2 * k + 1] = std::cos(static_cast<double>(t) / wav);
  }
  return out;
}

// Plain (non-tape) scaled dot-product attention for q [N,d], k [M,d],
// v [M,dv] -> [N,dv].
inline Tensor cross_attention_ref(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ValueError("cross_attention_ref: expects rank-2 inputs");
  std::size_t n = q.shape[0], d = q.shape[1], m = k.shape[0], dv = v.shape[1];
  if (k.shape[1] != d) throw ValueError("cross_attention_ref: key width mismatch");
  if (v.shape[0] != m) throw ValueError("cross_attention_ref: key/value count mismatch");
  double inv = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out = Tensor::zeros({n, dv});
  std::vector<double> w(m);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -1.0e300;
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += q.data[i * d + c] * k.data[j * d + c];
      w[j] = acc * inv;
      mx = std::max(mx, w[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      w[j] = std::exp(w[j] - mx);
      sum += w[j];
    }
    for (std::size_t j = 0; j < m; ++j) {
      double f = w[j] / sum;
      for (std::size_t c = 0; c < dv; ++c) out.data[i * dv + c] += f * v.data[j * dv + c];
    }
  }
  return out;
}

struct AttnParams {
  Tensor wq, wk, wv;  // [d, d_x], [d, d_tau], [d, d_tau]
};

struct FilmParams {
  Tensor scale_w, scale_b, shift_w, shift_b;  // [C, time_dim], [C]
};

struct MlpBlockParams {
  FilmParams film;
  Tensor w1, b1, w2, b2;
  AttnParams attn;
};

struct ConvResParams {
  FilmParams film;
  Tensor w1, b1, w2, b2;  // [C,C,3,3], [C]
};

struct DenoiserParams {
  DenoiserConfig cfg;

  // mlp
  Tensor stem_w, stem_b, head_w, head_b;
  std::vector<MlpBlockParams> mlp_blocks;

  // conv
  Tensor cstem_w, cstem_b;
  ConvResParams enc0, enc1, mid0, mid1, dec1, dec0;
  Tensor down0_w, down0_b, down1_w, down1_b;
  Tensor up1_w, up1_b, up0_w, up0_b;
  AttnParams attn_mid, attn_dec1, attn_dec0;
  Tensor chead_w, chead_b;

  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn&& fn) {
    auto film = [&](const std::string& p, auto& f) {
      fn(p + ".scale_w", f.scale_w);
      fn(p + ".scale_b", f.scale_b);
      fn(p + ".shift_w", f.shift_w);
      fn(p + ".shift_b", f.shift_b);
    };
    auto attn = [&](const std::string& p, auto& a) {
      fn(p + ".wq", a.wq);
      fn(p + ".wk", a.wk);
      fn(p + ".wv", a.wv);
    };
    auto res = [&](const std::string& p, auto& r) {
      film(p + ".film", r.film);
      fn(p + ".w1", r.w1);
      fn(p + ".b1", r.b1);
      fn(p + ".w2", r.w2);
      fn(p + ".b2", r.b2);
    };
    if (self.cfg.arch == DenoiserArch::mlp) {
      fn("den.stem_w", self.stem_w);
      fn("den.stem_b", self.stem_b);
      for (std::size_t i = 0; i < self.mlp_blocks.size(); ++i) {
        std::string p = "den.block" + std::to_string(i);
        auto& b = self.mlp_blocks[i];
        film(p + ".film", b.film);
        fn(p + ".w1", b.w1);
        fn(p + ".b1", b.b1);
        fn(p + ".w2", b.w2);
        fn(p + ".b2", b.b2);
        attn(p + ".attn", b.attn);
      }
      fn("den.head_w", self.head_w);
      fn("den.head_b", self.head_b);
    } else {
      fn("den.stem_w", self.cstem_w);
      fn("den.stem_b", self.cstem_b);
      res("den.enc0", self.enc0);
      fn("den.down0_w", self.down0_w);
      fn("den.down0_b", self.down0_b);
      res("den.enc1", self.enc1);
      fn("den.down1_w", self.down1_w);
      fn("den.down1_b", self.down1_b);
      res("den.mid0", self.mid0);
      attn("den.attn_mid", self.attn_mid);
      res("den.mid1", self.mid1);
      fn("den.up1_w", self.up1_w);
      fn("den.up1_b", self.up1_b);
      res("den.dec1", self.dec1);
      attn("den.attn_dec1", self.attn_dec1);
      fn("den.up0_w", self.up0_w);
      fn("den.up0_b", self.up0_b);
      res("den.dec0", self.dec0);
      attn("den.attn_dec0", self.attn_dec0);
      fn("den.head_w", self.chead_w);
      fn("den.head_b", self.chead_b);
    }
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }
};

namespace detail {

inline Tensor init_dense(RngState& rng, std::size_t out, std::size_t in) {
  Tensor w = sample_standard_normal(rng, {out, in});
  double sc = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.data) v *= sc;
  return w;
}

inline Tensor init_conv(RngState& rng, std::size_t out, std::size_t in) {
  Tensor w = sample_standard_normal(rng, {out, in, 3, 3});
  double sc = 1.0 / std::sqrt(static_cast<double>(in * 9));
  for (double& v : w.data) v *= sc;
  return w;
}

inline FilmParams init_film(RngState& rng, std::size_t ch, std::size_t time_dim) {
  FilmParams f;
  f.scale_w = init_dense(rng, ch, time_dim);
  f.scale_b = Tensor::zeros({ch});
  f.shift_w = init_dense(rng, ch, time_dim);
  f.shift_b = Tensor::zeros({ch});
  return f;
}

inline AttnParams init_attn(RngState& rng, std::size_t d, std::size_t dx, std::size_t dtau) {
  AttnParams a;
  a.wq = init_dense(rng, d, dx);
  a.wk = init_dense(rng, d, dtau);
  a.wv = init_dense(rng, d, dtau);
  return a;
}

inline ConvResParams init_conv_res(RngState& rng, std::size_t ch, std::size_t time_dim) {
  ConvResParams r;
  r.film = init_film(rng, ch, time_dim);
  r.w1 = init_conv(rng, ch, ch);
  r.b1 = Tensor::zeros({ch});
  r.w2 = init_conv(rng, ch, ch);
  r.b2 = Tensor::zeros({ch});
  return r;
}

}  // namespace detail

inline DenoiserParams init_denoiser(RngState& rng, const DenoiserConfig& cfg) {
  cfg.validate();
  DenoiserParams p;
  p.cfg = cfg;
  std::size_t td = static_cast<std::size_t>(cfg.time_dim);
  std::size_t dtau = static_cast<std::size_t>(cfg.token_dim);
  if (cfg.arch == DenoiserArch::mlp) {
    std::size_t d = static_cast<std::size_t>(cfg.latent_dim);
    std::size_t h = static_cast<std::size_t>(cfg.hidden);
    p.stem_w = detail::init_dense(rng, h, 2 * d);
    p.stem_b = Tensor::zeros({h});
    p.mlp_blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& b : p.mlp_blocks) {
      b.film = detail::init_film(rng, h, td);
      b.w1 = detail::init_dense(rng, h, h);
      b.b1 = Tensor::zeros({h});
      b.w2 = detail::init_dense(rng, h, h);
      b.b2 = Tensor::zeros({h});
      b.attn = detail::init_attn(rng, h, h, dtau);
    }
    p.head_w = Tensor::zeros({d, h});  // zero head: the net starts as the zero map
    p.head_b = Tensor::zeros({d});
  } else {
    std::size_t c0 = static_cast<std::size_t>(cfg.hidden);
    std::size_t c1 = 2 * c0, c2 = 4 * c0;
    std::size_t in_ch = 2 * static_cast<std::size_t>(cfg.img_c) + 2;  // z_t, z_a, coord maps
    p.cstem_w = detail::init_conv(rng, c0, in_ch);
    p.cstem_b = Tensor::zeros({c0});
    p.enc0 = detail::init_conv_res(rng, c0, td);
    p.down0_w = detail::init_conv(rng, c1, c0);
    p.down0_b = Tensor::zeros({c1});
    p.enc1 = detail::init_conv_res(rng, c1, td);
    p.down1_w = detail::init_conv(rng, c2, c1);
    p.down1_b = Tensor::zeros({c2});
    p.mid0 = detail::init_conv_res(rng, c2, td);
    p.attn_mid = detail::init_attn(rng, c2, c2, dtau);
    p.mid1 = detail::init_conv_res(rng, c2, td);
    p.up1_w = detail::init_conv(rng, c1, c2);
    p.up1_b = Tensor::zeros({c1});
    p.dec1 = detail::init_conv_res(rng, c1, td);
    p.attn_dec1 = detail::init_attn(rng, c1, c1, dtau);
    p.up0_w = detail::init_conv(rng, c0, c1);
    p.up0_b = Tensor::zeros({c0});
    p.dec0 = detail::init_conv_res(rng, c0, td);
    p.attn_dec0 = detail::init_attn(rng, c0, c0, dtau);
    p.chead_w = Tensor::zeros({static_cast<std::size_t>(cfg.img_c), c0, 3, 3});
    p.chead_b = Tensor::zeros({static_cast<std::size_t>(cfg.img_c)});
  }
  return p;
}

// ---- tape-side forward ----

using ParamVarMap = std::map<std::string, ad::Var>;

namespace detail {

inline ad::Var pv_get(const ParamVarMap& pv, const std::string& name) {
  auto it = pv.find(name);
  if (it == pv.end()) throw ValueError("missing bound parameter: " + name);
  return it->second;
}

inline Tensor stack_time_embeddings(const std::vector<int>& ts, int dim) {
  Tensor out = Tensor::zeros({ts.size(), static_cast<std::size_t>(dim)});
  for (std::size_t b = 0; b < ts.size(); ++b) {
    Tensor e = time_embedding(ts[b], dim);
    std::copy_n(e.data.data(), e.data.size(), out.data.data() + b * e.data.size());
  }
  return out;
}

// [B,N,dx] tokens attend over [B,M,dtau] condition tokens; output width
// equals wq rows and is added to the stream by the caller.
inline ad::Var attention(ad::Tape& t, ad::Var x_tokens, ad::Var cond, const ParamVarMap& pv,
                         const std::string& prefix) {
  ad::Var wq = pv_get(pv, prefix + ".wq");
  ad::Var q = t.linear(x_tokens, wq);
  ad::Var k = t.linear(cond, pv_get(pv, prefix + ".wk"));
  ad::Var v = t.linear(cond, pv_get(pv, prefix + ".wv"));
  double d = static_cast<double>(t.shape(wq)[0]);
  ad::Var scores = t.scale(t.bmm_nt(q, k), 1.0 / std::sqrt(d));
  return t.bmm_nn(t.softmax_last(scores), v);
}

inline std::pair<ad::Var, ad::Var> film_scale_shift(ad::Tape& t, ad::Var temb,
                                                    const ParamVarMap& pv,
                                                    const std::string& prefix) {
  ad::Var s = t.add_bcast(t.linear(temb, pv_get(pv, prefix + ".scale_w")),
                          pv_get(pv, prefix + ".scale_b"));
  ad::Var h = t.add_bcast(t.linear(temb, pv_get(pv, prefix + ".shift_w")),
                          pv_get(pv, prefix + ".shift_b"));
  return {s, h};
}

inline ad::Var conv_res_block(ad::Tape& t, ad::Var x, ad::Var temb, const ParamVarMap& pv,
                              const std::string& prefix) {
  auto [s, sh] = film_scale_shift(t, temb, pv, prefix + ".film");
  ad::Var h = t.film_chw(x, s, sh);
  h = t.conv3x3(t.silu(h), pv_get(pv, prefix + ".w1"), pv_get(pv, prefix + ".b1"));
  h = t.conv3x3(t.silu(h), pv_get(pv, prefix + ".w2"), pv_get(pv, prefix + ".b2"));
  return t.add(x, h);
}

inline Tensor coord_channels(std::size_t b, std::size_t h, std::size_t w) {
  Tensor out = Tensor::zeros({b, 2, h, w});
  for (std::size_t i = 0; i < b; ++i) {
    double* yplane = out.data.data() + (i * 2 + 0) * h * w;
    double* xplane = out.data.data() + (i * 2 + 1) * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        yplane[y * w + x] = h > 1 ? 2.0 * static_cast<double>(y) / (static_cast<double>(h) - 1.0) - 1.0 : 0.0;
        xplane[y * w + x] = w > 1 ? 2.0 * static_cast<double>(x) / (static_cast<double>(w) - 1.0) - 1.0 : 0.0;
      }
  }
  return out;
}

}  // namespace detail

// Batched forward pass on the tape. z_t and z_a are [B, latent_dim] for the
// mlp body and [B, C, H, W] for the conv body; cond is [B, M, token_dim].
inline ad::Var denoiser_forward(ad::Tape& t, const ParamVarMap& pv, const DenoiserConfig& cfg,
                                ad::Var z_t, ad::Var z_a, const std::vector<int>& ts,
                                ad::Var cond) {
  cfg.validate();
  const Shape& zs = t.shape(z_t);
  if (zs != t.shape(z_a)) throw ValueError("denoiser_forward: z_t and z_a shapes differ");
  if (zs[0] != ts.size()) throw ValueError("denoiser_forward: batch size mismatch with t");
  if (t.shape(cond).size() != 3 || t.shape(cond)[0] != zs[0])
    throw ValueError("denoiser_forward: condition tokens must be [B, M, token_dim]");
  ad::Var temb = t.constant(detail::stack_time_embeddings(ts, cfg.time_dim));

  using detail::pv_get;
  if (cfg.arch == DenoiserArch::mlp) {
    if (zs.size() != 2 || zs[1] != static_cast<std::size_t>(cfg.latent_dim))
      throw ValueError("denoiser_forward: mlp latents must be [B, latent_dim]");
    std::size_t bsz = zs[0], hsz = static_cast<std::size_t>(cfg.hidden);
    ad::Var h = t.add_bcast(t.linear(t.concat(z_t, z_a, 1), pv_get(pv, "den.stem_w")),
                            pv_get(pv, "den.stem_b"));
    for (int i = 0; i < cfg.blocks; ++i) {
      std::string p = "den.block" + std::to_string(i);
      auto [s, sh] = detail::film_scale_shift(t, temb, pv, p + ".film");
      ad::Var u = t.add(t.mul(h, t.affine(s, 1.0, 1.0)), sh);
      u = t.add_bcast(t.linear(t.silu(u), pv_get(pv, p + ".w1")), pv_get(pv, p + ".b1"));
      u = t.add_bcast(t.linear(t.silu(u), pv_get(pv, p + ".w2")), pv_get(pv, p + ".b2"));
      h = t.add(h, u);
      ad::Var q = t.reshape(h, {bsz, 1, hsz});
      ad::Var a = detail::attention(t, q, cond, pv, p + ".attn");
      h = t.add(h, t.reshape(a, {bsz, hsz}));
    }
    return t.add_bcast(t.linear(h, pv_get(pv, "den.head_w")), pv_get(pv, "den.head_b"));
  }

  if (zs.size() != 4 || zs[1] != static_cast<std::size_t>(cfg.img_c) ||
      zs[2] != static_cast<std::size_t>(cfg.img_h) || zs[3] != static_cast<std::size_t>(cfg.img_w))
    throw ValueError("denoiser_forward: conv latents must be [B, img_c, img_h, img_w]");
  std::size_t bsz = zs[0], hh = zs[2], ww = zs[3];

  ad::Var coords = t.constant(detail::coord_channels(bsz, hh, ww));
  ad::Var x = t.concat(t.concat(z_t, z_a, 1), coords, 1);
  x = t.conv3x3(x, pv_get(pv, "den.stem_w"), pv_get(pv, "den.stem_b"));

  ad::Var s0 = detail::conv_res_block(t, x, temb, pv, "den.enc0");
  x = t.conv3x3(t.avgpool2(s0), pv_get(pv, "den.down0_w"), pv_get(pv, "den.down0_b"));
  ad::Var s1 = detail::conv_res_block(t, x, temb, pv, "den.enc1");
  x = t.conv3x3(t.avgpool2(s1), pv_get(pv, "den.down1_w"), pv_get(pv, "den.down1_b"));

  x = detail::conv_res_block(t, x, temb, pv, "den.mid0");
  {
    ad::Var tokens = t.tokens_from_chw(x);
    ad::Var a = detail::attention(t, tokens, cond, pv, "den.attn_mid");
    x = t.add(x, t.chw_from_tokens(a, hh / 4, ww / 4));
  }
  x = detail::conv_res_block(t, x, temb, pv, "den.mid1");

  x = t.conv3x3(t.upsample2(x), pv_get(pv, "den.up1_w"), pv_get(pv, "den.up1_b"));
  x = detail::conv_res_block(t, t.add(x, s1), temb, pv, "den.dec1");
  {
    ad::Var tokens = t.tokens_from_chw(x);
    ad::Var a = detail::attention(t, tokens, cond, pv, "den.attn_dec1");
    x = t.add(x, t.chw_from_tokens(a, hh / 2, ww / 2));
  }

  x = t.conv3x3(t.upsample2(x), pv_get(pv, "den.up0_w"), pv_get(pv, "den.up0_b"));
  x = detail::conv_res_block(t, t.add(x, s0), temb, pv, "den.dec0");
  {
    ad::Var tokens = t.tokens_from_chw(x);
    ad::Var a = detail::attention(t, tokens, cond, pv, "den.attn_dec0");
    x = t.add(x, t.chw_from_tokens(a, hh, ww));
  }

  return t.conv3x3(x, pv_get(pv, "den.head_w"), pv_get(pv, "den.head_b"));
}

// Binds every parameter as a tape leaf (trainable) or constant (inference).
template <typename Params>
inline ParamVarMap bind_params(ad::Tape& t, const Params& params, bool trainable) {
  ParamVarMap pv;
  params.visit([&](const std::string& name, const Tensor& tensor) {
    pv.emplace(name, trainable ? t.leaf(tensor) : t.constant(tensor));
  });
  return pv;
}

// ---- inference-side latent geometry ----

// Lifts a stored latent ([D], [H,W] or [C,H,W]) into the batched layout the
// forward pass expects, for batch size 1.
inline Tensor batch_of_one(const Tensor& latent, const DenoiserConfig& cfg) {
  if (cfg.arch == DenoiserArch::mlp) {
    if (latent.size() != static_cast<std::size_t>(cfg.latent_dim))
      throw ValueError("latent does not match denoiser latent_dim");
    return Tensor({1, latent.size()}, latent.data);
  }
  Shape want{static_cast<std::size_t>(cfg.img_c), static_cast<std::size_t>(cfg.img_h),
             static_cast<std::size_t>(cfg.img_w)};
  if (latent.rank() == 2 && cfg.img_c == 1 && latent.shape[0] == want[1] &&
      latent.shape[1] == want[2])
    return Tensor({1, want[0], want[1], want[2]}, latent.data);
  if (latent.rank() == 3 && latent.shape == want)
    return Tensor({1, want[0], want[1], want[2]}, latent.data);
  throw ValueError("latent does not match denoiser image geometry");
}

// Wraps parameters into the sampler's residual-predictor callable. Each call
// evaluates the network value-only on a throwaway tape.
inline DenoiserFn make_denoiser_fn(const DenoiserParams& params) {
  DenoiserConfig cfg = params.cfg;
  return [params, cfg](const Tensor& z_t, int step, const Tensor& z_a,
                       const ConditionTokens& cond) -> Tensor {
    ad::Tape tape;
    ParamVarMap pv = bind_params(tape, params, false);
    ad::Var zt = tape.constant(batch_of_one(z_t, cfg));
    ad::Var za = tape.constant(batch_of_one(z_a, cfg));
    const Tensor& tok = cond.tokens;
    if (tok.rank() != 2) throw ValueError("condition tokens must be [M, token_dim]");
    ad::Var cv = tape.constant(Tensor({1, tok.shape[0], tok.shape[1]}, tok.data));
    ad::Var out = denoiser_forward(tape, pv, cfg, zt, za, {step}, cv);
    Tensor flat = tape.value(out);
    return Tensor(z_t.shape, std::move(flat.data));
  };
}

// Residual predictor that knows the true endpoints: returns the exact
// noise-free target m_t (z_a - z_b), which the deterministic sampler must
// integrate back to z_b.
inline DenoiserFn oracle_denoiser(const BridgeSchedule& sched, const Tensor& z_b,
                                  const Tensor& z_a) {
  BridgeSchedule s = sched;
  Tensor b = z_b, a = z_a;
  return [s, b, a](const Tensor&, int step, const Tensor&, const ConditionTokens&) -> Tensor {
    return network_target(s, b, a, step, Tensor::zeros(b.shape));
  };
}

}  // namespace bridgegen
