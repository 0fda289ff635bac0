#pragma once

// Discrete-time bridge schedule on t = 0..T and the closed-form
// quantities derived from it: transition variances between arbitrary
// step pairs and reverse-step posterior coefficients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bridgegen/common.hpp"

namespace bridgegen {

struct BridgeSchedule {
  int T = 0;
  double s = 1.0;
  std::vector<double> m;       // m[t] = t/T, size T+1
  std::vector<double> delta;   // delta[t] = 2 s (m[t] - m[t]^2), size T+1

  void require_step(int t, const char* what) const {
    if (t < 0 || t > T)
      throw ValueError(std::string(what) + ": step " + std::to_string(t) +
                       " outside [0, " + std::to_string(T) + "]");
  }
};

inline BridgeSchedule build_schedule(int T, double s = 1.0) {
  if (T < 2) throw ValueError("schedule needs T >= 2, got " + std::to_string(T));
  if (!(s > 0.0) || !std::isfinite(s)) throw ValueError("variance scale s must be positive");
  BridgeSchedule sched;
  sched.T = T;
  sched.s = s;
  sched.m.resize(static_cast<std::size_t>(T) + 1);
  sched.delta.resize(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) {
    double mt = static_cast<double>(t) / static_cast<double>(T);
    sched.m[static_cast<std::size_t>(t)] = mt;
    sched.delta[static_cast<std::size_t>(t)] = 2.0 * s * (mt - mt * mt);
  }
  return sched;
}

// Variance of z_{t_hi} given z_{t_lo} (and the endpoint), i.e. the gap the
// chain adds between two steps. Negative round-off is clamped to zero.
inline double transition_variance(const BridgeSchedule& sched, int t_hi, int t_lo) {
  sched.require_step(t_hi, "transition_variance");
  sched.require_step(t_lo, "transition_variance");
  if (t_lo >= t_hi) throw ValueError("transition_variance: requires t_lo < t_hi");
  double a = (1.0 - sched.m[static_cast<std::size_t>(t_hi)]) /
             (1.0 - sched.m[static_cast<std::size_t>(t_lo)]);
  double var = sched.delta[static_cast<std::size_t>(t_hi)] -
               sched.delta[static_cast<std::size_t>(t_lo)] * a * a;
  return std::max(var, 0.0);
}

// Coefficients of the reverse-step posterior mean
//   mu = c_b * z_t + c_a * z_a - c_eps * eps_hat
// where eps_hat predicts the reparameterized residual z_t - z_b, plus the
// posterior variance `var`. Valid for 0 <= t_lo < t_hi <= T-1; the t_hi = T
// start rule is handled separately because delta[T] = 0.
struct StepCoefficients {
  double c_b = 0.0;
  double c_a = 0.0;
  double c_eps = 0.0;
  double var = 0.0;
};

inline StepCoefficients posterior_coefficients(const BridgeSchedule& sched, int t_hi, int t_lo) {
  sched.require_step(t_hi, "posterior_coefficients");
  sched.require_step(t_lo, "posterior_coefficients");
  if (t_lo >= t_hi) throw ValueError("posterior_coefficients: requires t_lo < t_hi");
  if (t_hi >= sched.T)
    throw ValueError("posterior_coefficients: t_hi = T has a degenerate marginal; "
                     "use the start rule");
  double m_hi = sched.m[static_cast<std::size_t>(t_hi)];
  double m_lo = sched.m[static_cast<std::size_t>(t_lo)];
  double d_hi = sched.delta[static_cast<std::size_t>(t_hi)];
  double d_lo = sched.delta[static_cast<std::size_t>(t_lo)];
  double a = (1.0 - m_hi) / (1.0 - m_lo);
  double d_gap = transition_variance(sched, t_hi, t_lo);

  StepCoefficients c;
  double on_zt = a * d_lo / d_hi;                  // z0-form weight on z_t
  c.c_eps = (1.0 - m_lo) * d_gap / d_hi;           // z0-form weight on z_b
  c.c_b = on_zt + c.c_eps;
  c.c_a = m_lo - m_hi * on_zt;
  c.var = d_gap * d_lo / d_hi;
  return c;
}

// Limit of posterior_coefficients as t_hi -> T, where z_T = z_a exactly and
// the predicted residual alone pins z_b: z_lo = (1 - m_lo) (z_T - eps_hat)
// + m_lo z_a (+ posterior noise if stochastic).
inline StepCoefficients start_rule_coefficients(const BridgeSchedule& sched, int t_lo) {
  sched.require_step(t_lo, "start_rule_coefficients");
  if (t_lo >= sched.T) throw ValueError("start_rule_coefficients: requires t_lo < T");
  double m_lo = sched.m[static_cast<std::size_t>(t_lo)];
  StepCoefficients c;
  c.c_b = 1.0;
  c.c_a = 0.0;
  c.c_eps = 1.0 - m_lo;
  c.var = sched.delta[static_cast<std::size_t>(t_lo)];
  return c;
}

// Decreasing step sequence T = t_0 > t_1 > ... > t_S = 0 with S segments,
// t_i = round(T (1 - i/S)), duplicates collapsed.
inline std::vector<int> inference_steps(int T, int S) {
  if (T < 2) throw ValueError("inference_steps: T must be >= 2");
  if (S < 1 || S > T) throw ValueError("inference_steps: S must be in [1, T]");
  std::vector<int> steps;
  steps.reserve(static_cast<std::size_t>(S) + 1);
  for (int i = 0; i <= S; ++i) {
    double raw = static_cast<double>(T) * (static_cast<double>(S - i) / static_cast<double>(S));
    int t = static_cast<int>(std::lround(raw));
    t = std::clamp(t, 0, T);
    if (steps.empty() || steps.back() != t) steps.push_back(t);
  }
  return steps;
}

}  // namespace bridgegen
