#pragma once

// The conditional bridge process between a pre-event latent z_b (t = 0)
// and a post-event latent z_a (t = T): forward marginal / transition
// sampling, the reparameterized network target, and reverse-time sampling
// driven by a residual predictor.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "bridgegen/conditioning.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/schedule.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen {

// Draws z_t ~ N((1-m_t) z_b + m_t z_a, delta_t I) and returns (z_t, eps).
// The noise tensor is drawn even at the pinned endpoints so the stream
// position does not depend on t.
inline std::pair<Tensor, Tensor> forward_marginal_sample(const BridgeSchedule& sched,
                                                         const Tensor& z_b, const Tensor& z_a,
                                                         int t, RngState& rng) {
  require_same_shape(z_b, z_a, "forward_marginal_sample");
  sched.require_step(t, "forward_marginal_sample");
  double m = sched.m[static_cast<std::size_t>(t)];
  double sd = std::sqrt(sched.delta[static_cast<std::size_t>(t)]);
  Tensor eps = sample_standard_normal(rng, z_b.shape);
  Tensor z_t = Tensor::zeros(z_b.shape);
  for (std::size_t i = 0; i < z_t.size(); ++i)
    z_t.data[i] = (1.0 - m) * z_b.data[i] + m * z_a.data[i] + sd * eps.data[i];
  return {std::move(z_t), std::move(eps)};
}

// One forward chain step: z_t given z_{t-1} and the endpoint z_a. At t = T
// the coefficients collapse to (0, 1, 0), so the chain lands on z_a exactly.
inline Tensor forward_transition_sample(const BridgeSchedule& sched, const Tensor& z_prev,
                                        const Tensor& z_a, int t, RngState& rng) {
  require_same_shape(z_prev, z_a, "forward_transition_sample");
  sched.require_step(t, "forward_transition_sample");
  if (t < 1) throw ValueError("forward_transition_sample: t must be >= 1");
  double m_t = sched.m[static_cast<std::size_t>(t)];
  double m_p = sched.m[static_cast<std::size_t>(t - 1)];
  double a = (1.0 - m_t) / (1.0 - m_p);
  double sd = std::sqrt(transition_variance(sched, t, t - 1));
  Tensor noise = sample_standard_normal(rng, z_prev.shape);
  Tensor z_t = Tensor::zeros(z_prev.shape);
  for (std::size_t i = 0; i < z_t.size(); ++i)
    z_t.data[i] = a * z_prev.data[i] + (m_t - a * m_p) * z_a.data[i] + sd * noise.data[i];
  return z_t;
}

// Recovers the noise that produced z_t from a marginal draw. Only defined
// strictly inside the bridge where delta_t > 0.
inline Tensor exact_epsilon(const BridgeSchedule& sched, const Tensor& z_t, const Tensor& z_b,
                            const Tensor& z_a, int t) {
  require_same_shape(z_t, z_b, "exact_epsilon");
  require_same_shape(z_t, z_a, "exact_epsilon");
  sched.require_step(t, "exact_epsilon");
  if (t <= 0 || t >= sched.T)
    throw ValueError("exact_epsilon: undefined at the pinned endpoints");
  double m = sched.m[static_cast<std::size_t>(t)];
  double sd = std::sqrt(sched.delta[static_cast<std::size_t>(t)]);
  Tensor eps = Tensor::zeros(z_t.shape);
  for (std::size_t i = 0; i < eps.size(); ++i)
    eps.data[i] = (z_t.data[i] - (1.0 - m) * z_b.data[i] - m * z_a.data[i]) / sd;
  return eps;
}

// Reparameterized regression target m_t (z_a - z_b) + sqrt(delta_t) eps,
// identically equal to z_t - z_b for the z_t built from the same eps.
inline Tensor network_target(const BridgeSchedule& sched, const Tensor& z_b, const Tensor& z_a,
                             int t, const Tensor& eps) {
  require_same_shape(z_b, z_a, "network_target");
  require_same_shape(z_b, eps, "network_target");
  sched.require_step(t, "network_target");
  double m = sched.m[static_cast<std::size_t>(t)];
  double sd = std::sqrt(sched.delta[static_cast<std::size_t>(t)]);
  Tensor out = Tensor::zeros(z_b.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = m * (z_a.data[i] - z_b.data[i]) + sd * eps.data[i];
  return out;
}

// One reverse step t_hi -> t_lo given the predicted residual. Deterministic
// by default; when stochastic, adds posterior noise (which vanishes at
// t_lo = 0, keeping the chain pinned).
inline Tensor reverse_step(const BridgeSchedule& sched, const Tensor& z_hi, const Tensor& z_a,
                           const Tensor& eps_hat, int t_hi, int t_lo, bool stochastic,
                           RngState& rng) {
  require_same_shape(z_hi, z_a, "reverse_step");
  require_same_shape(z_hi, eps_hat, "reverse_step");
  StepCoefficients c = (t_hi == sched.T) ? start_rule_coefficients(sched, t_lo)
                                         : posterior_coefficients(sched, t_hi, t_lo);
  Tensor z_lo = Tensor::zeros(z_hi.shape);
  for (std::size_t i = 0; i < z_lo.size(); ++i)
    z_lo.data[i] = c.c_b * z_hi.data[i] + c.c_a * z_a.data[i] - c.c_eps * eps_hat.data[i];
  if (stochastic && c.var > 0.0) {
    double sd = std::sqrt(c.var);
    Tensor noise = sample_standard_normal(rng, z_lo.shape);
    for (std::size_t i = 0; i < z_lo.size(); ++i) z_lo.data[i] += sd * noise.data[i];
  }
  return z_lo;
}

// Residual predictor: given (z_t, t, z_a, condition tokens) returns the
// predicted network target.
using DenoiserFn =
    std::function<Tensor(const Tensor& z_t, int t, const Tensor& z_a, const ConditionTokens&)>;

struct SampleTrace {
  std::vector<int> steps;      // visited step indices, T first, 0 last
  std::vector<Tensor> states;  // latent at each visited step
  const Tensor& result() const { return states.back(); }
};

// Runs the reverse chain from z_T = z_a down to t = 0 over S segments.
inline SampleTrace sample(const BridgeSchedule& sched, const DenoiserFn& denoiser,
                          const Tensor& z_a, const ConditionTokens& cond, int S,
                          bool stochastic, RngState& rng) {
  std::vector<int> steps = inference_steps(sched.T, S);
  SampleTrace trace;
  trace.steps = steps;
  trace.states.reserve(steps.size());
  trace.states.push_back(z_a);
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    int t_hi = steps[i], t_lo = steps[i + 1];
    const Tensor& z = trace.states.back();
    Tensor eps_hat = denoiser(z, t_hi, z_a, cond);
    require_same_shape(eps_hat, z, "sample: denoiser output");
    trace.states.push_back(reverse_step(sched, z, z_a, eps_hat, t_hi, t_lo, stochastic, rng));
  }
  return trace;
}

}  // namespace bridgegen
