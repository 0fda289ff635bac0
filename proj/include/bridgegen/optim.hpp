#pragma once

// Adaptive-moment optimizer with bias correction, plus global-norm gradient
// clipping. Parameters and gradients travel as parallel tensor lists in a
// fixed visitation order so updates are deterministic.

#include <cmath>
#include <cstdint>
#include <vector>

#include "bridgegen/tensor.hpp"

namespace bridgegen {

struct AdamConfig {
  double lr = 1.0e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1.0e-8;
};

struct AdamState {
  std::uint64_t t = 0;
  std::vector<Tensor> m, v;

  void init_like(const std::vector<Tensor*>& params) {
    t = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor* p : params) {
      m.push_back(Tensor::zeros(p->shape));
      v.push_back(Tensor::zeros(p->shape));
    }
  }
};

inline double global_l2_norm(const std::vector<Tensor>& grads) {
  double acc = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data) acc += v * v;
  return std::sqrt(acc);
}

// Scales all gradients so the global L2 norm is at most max_norm; returns
// the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ValueError("clip_global_norm: max_norm must be positive");
  double norm = global_l2_norm(grads);
  if (norm > max_norm) {
    double k = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data) v *= k;
  }
  return norm;
}

inline void adam_step(AdamState& st, const AdamConfig& cfg, const std::vector<Tensor*>& params,
                      const std::vector<Tensor>& grads) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ValueError("adam_step: parameter/gradient/state count mismatch");
  st.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(st.m[i]))
      throw ValueError("adam_step: shape mismatch at slot " + std::to_string(i));
    for (std::size_t j = 0; j < p.size(); ++j) {
      double gj = g.data[j];
      double mj = st.m[i].data[j] = cfg.beta1 * st.m[i].data[j] + (1.0 - cfg.beta1) * gj;
      double vj = st.v[i].data[j] = cfg.beta2 * st.v[i].data[j] + (1.0 - cfg.beta2) * gj * gj;
      p.data[j] -= cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
    }
  }
}

}  // namespace bridgegen
