#pragma once

// Latent codec between data space and the space the bridge runs in. The
// identity codec passes tensors through; the linear codec learns an
// affine encoder/decoder pair (a bottleneck autoencoder, which at the MSE
// optimum spans the data's principal subspace).

#include <string>
#include <vector>

#include "bridgegen/autodiff.hpp"
#include "bridgegen/optim.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen {

enum class CodecMode { identity, linear };

inline std::string codec_mode_name(CodecMode m) {
  return m == CodecMode::identity ? "identity" : "linear";
}

inline CodecMode codec_mode_from_name(const std::string& name) {
  if (name == "identity") return CodecMode::identity;
  if (name == "linear") return CodecMode::linear;
  throw ValueError("unknown codec mode: " + name);
}

struct CodecParams {
  CodecMode mode = CodecMode::identity;
  Shape data_shape;    // per-sample shape in data space
  Shape latent_shape;  // per-sample shape in latent space
  Tensor enc_w, enc_b, dec_w, dec_b;  // linear mode only

  template <typename Fn>
  void visit(Fn&& fn) {
    if (mode != CodecMode::linear) return;
    fn("codec.enc_w", enc_w);
    fn("codec.enc_b", enc_b);
    fn("codec.dec_w", dec_w);
    fn("codec.dec_b", dec_b);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    if (mode != CodecMode::linear) return;
    fn("codec.enc_w", enc_w);
    fn("codec.enc_b", enc_b);
    fn("codec.dec_w", dec_w);
    fn("codec.dec_b", dec_b);
  }
};

inline CodecParams make_identity_codec(const Shape& data_shape) {
  shape_numel(data_shape);
  CodecParams c;
  c.mode = CodecMode::identity;
  c.data_shape = data_shape;
  c.latent_shape = data_shape;
  return c;
}

inline CodecParams init_linear_codec(RngState& rng, const Shape& data_shape,
                                     const Shape& latent_shape) {
  std::size_t n = shape_numel(data_shape);
  std::size_t k = shape_numel(latent_shape);
  if (k >= n) throw ValueError("linear codec: latent must be smaller than data");
  CodecParams c;
  c.mode = CodecMode::linear;
  c.data_shape = data_shape;
  c.latent_shape = latent_shape;
  c.enc_w = sample_standard_normal(rng, {k, n});
  double sc = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& v : c.enc_w.data) v *= sc;
  c.enc_b = Tensor::zeros({k});
  c.dec_w = sample_standard_normal(rng, {n, k});
  sc = 1.0 / std::sqrt(static_cast<double>(k));
  for (double& v : c.dec_w.data) v *= sc;
  c.dec_b = Tensor::zeros({n});
  return c;
}

inline Tensor codec_encode(const CodecParams& c, const Tensor& x) {
  if (x.shape != c.data_shape)
    throw ValueError("codec_encode: input shape " + shape_to_string(x.shape) +
                     " does not match codec data shape " + shape_to_string(c.data_shape));
  if (c.mode == CodecMode::identity) return x;
  std::size_t n = x.size(), k = shape_numel(c.latent_shape);
  Tensor z = Tensor::zeros(c.latent_shape);
  for (std::size_t i = 0; i < k; ++i) {
    const double* row = c.enc_w.data.data() + i * n;
    double acc = c.enc_b.data[i];
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * x.data[j];
    z.data[i] = acc;
  }
  return z;
}

inline Tensor codec_decode(const CodecParams& c, const Tensor& z) {
  if (z.shape != c.latent_shape)
    throw ValueError("codec_decode: input shape " + shape_to_string(z.shape) +
                     " does not match codec latent shape " + shape_to_string(c.latent_shape));
  if (c.mode == CodecMode::identity) return z;
  std::size_t n = shape_numel(c.data_shape), k = z.size();
  Tensor x = Tensor::zeros(c.data_shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = c.dec_w.data.data() + i * k;
    double acc = c.dec_b.data[i];
    for (std::size_t j = 0; j < k; ++j) acc += row[j] * z.data[j];
    x.data[i] = acc;
  }
  return x;
}

struct CodecTrainConfig {
  int steps = 2000;
  int batch = 32;
  double lr = 1.0e-2;
};

// Minimizes mean squared reconstruction error over the given tensors.
// Returns the per-step loss history.
inline std::vector<double> train_codec(CodecParams& codec, const std::vector<Tensor>& data,
                                       const CodecTrainConfig& cfg, RngState& rng) {
  if (codec.mode != CodecMode::linear) throw ValueError("train_codec: codec is not trainable");
  if (data.empty()) throw ValueError("train_codec: data must be non-empty");
  if (cfg.steps < 1 || cfg.batch < 1) throw ValueError("train_codec: bad steps/batch");
  for (const Tensor& t : data)
    if (t.shape != codec.data_shape)
      throw ValueError("train_codec: sample shape does not match codec data shape");
  std::size_t n = shape_numel(codec.data_shape);
  std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), data.size());

  AdamState adam;
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  std::vector<Tensor*> params{&codec.enc_w, &codec.enc_b, &codec.dec_w, &codec.dec_b};
  adam.init_like(params);

  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor batch = Tensor::zeros({bsz, n});
    for (std::size_t b = 0; b < bsz; ++b) {
      std::size_t idx = static_cast<std::size_t>(next_u64(rng) % data.size());
      std::copy_n(data[idx].data.data(), n, batch.data.data() + b * n);
    }
    ad::Tape tape;
    ad::Var x = tape.constant(batch);
    ad::Var ew = tape.leaf(codec.enc_w), eb = tape.leaf(codec.enc_b);
    ad::Var dw = tape.leaf(codec.dec_w), db = tape.leaf(codec.dec_b);
    ad::Var z = tape.add_bcast(tape.linear(x, ew), eb);
    ad::Var xr = tape.add_bcast(tape.linear(z, dw), db);
    ad::Var loss = tape.weighted_mse(xr, x, std::vector<double>(bsz, 1.0));
    tape.backward(loss);
    history.push_back(tape.val(loss)[0]);
    std::vector<Tensor> grads{tape.grad(ew), tape.grad(eb), tape.grad(dw), tape.grad(db)};
    adam_step(adam, acfg, params, grads);
  }
  return history;
}

// Mean squared reconstruction error of the codec over a dataset.
inline double codec_reconstruction_mse(const CodecParams& codec, const std::vector<Tensor>& data) {
  if (data.empty()) throw ValueError("codec_reconstruction_mse: data must be non-empty");
  double acc = 0.0;
  for (const Tensor& x : data) {
    Tensor xr = codec_decode(codec, codec_encode(codec, x));
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = xr.data[i] - x.data[i];
      acc += d * d;
    }
  }
  return acc / (static_cast<double>(data.size()) * static_cast<double>(data[0].size()));
}

}  // namespace bridgegen
