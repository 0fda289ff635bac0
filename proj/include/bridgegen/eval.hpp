#pragma once

// Distribution-level checks and task metrics: Monte-Carlo marginal
// verification (direct and chain-composed), an independent grid-quadrature
// oracle for the reverse-step posterior, kernel MMD with the median
// heuristic, and the two toy-task scores.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bridgegen/bridge.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/schedule.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen {

enum class MarginalMode { direct, chain };

struct MarginalCheckReport {
  int t = 0;
  std::size_t n = 0;
  double expected_mean = 0.0, expected_var = 0.0;
  double empirical_mean = 0.0, empirical_var = 0.0;
  double z_mean = 0.0, z_var = 0.0;  // standardized deviations
  bool pass = false;
};

// Draws n scalar samples of z_t (directly from the marginal, or by
// composing forward transitions from t = 0) and compares moments against
// the closed form at a 3-sigma band.
inline MarginalCheckReport marginal_stats_check(const BridgeSchedule& sched, double z_b,
                                                double z_a, int t, std::size_t n, RngState& rng,
                                                MarginalMode mode) {
  sched.require_step(t, "marginal_stats_check");
  if (t < 1 || t > sched.T - 1)
    throw ValueError("marginal_stats_check: t must be an interior step");
  if (n < 2) throw ValueError("marginal_stats_check: n must be >= 2");
  double m = sched.m[static_cast<std::size_t>(t)];
  double var = sched.delta[static_cast<std::size_t>(t)];
  MarginalCheckReport rep;
  rep.t = t;
  rep.n = n;
  rep.expected_mean = (1.0 - m) * z_b + m * z_a;
  rep.expected_var = var;

  Tensor zb = Tensor::scalar(z_b), za = Tensor::scalar(z_a);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0;
    if (mode == MarginalMode::direct) {
      x = forward_marginal_sample(sched, zb, za, t, rng).first.data[0];
    } else {
      Tensor z = zb;
      for (int step = 1; step <= t; ++step) z = forward_transition_sample(sched, z, za, step, rng);
      x = z.data[0];
    }
    sum += x;
    sumsq += x * x;
  }
  double nn = static_cast<double>(n);
  rep.empirical_mean = sum / nn;
  rep.empirical_var = (sumsq - nn * rep.empirical_mean * rep.empirical_mean) / (nn - 1.0);
  rep.z_mean = (rep.empirical_mean - rep.expected_mean) / std::sqrt(var / nn);
  rep.z_var = (rep.empirical_var - var) / (var * std::sqrt(2.0 / (nn - 1.0)));
  rep.pass = std::abs(rep.z_mean) <= 3.0 && std::abs(rep.z_var) <= 3.0;
  return rep;
}

struct PosteriorMoments {
  double mean = 0.0;
  double var = 0.0;
};

// Quadrature oracle for the scalar reverse-step posterior
//   p(z_lo | z_hi, z_b, z_a) prop N(z_lo; marginal) * N(z_hi; transition)
// evaluated by Bayes' rule on a uniform grid, with no use of the closed-form
// posterior coefficients. The grid must place negligible mass (< 1e-8 of
// the peak) at its ends, else the result would be untrustworthy.
inline PosteriorMoments posterior_oracle(const BridgeSchedule& sched, double z_b, double z_a,
                                         double z_hi, int t_hi, int t_lo,
                                         std::size_t grid_n = 8001) {
  if (t_lo < 1 || t_hi > sched.T - 1 || t_lo >= t_hi)
    throw ValueError("posterior_oracle: requires 1 <= t_lo < t_hi <= T-1");
  if (grid_n < 4001) throw ValueError("posterior_oracle: grid must have at least 4001 points");
  double m_hi = sched.m[static_cast<std::size_t>(t_hi)];
  double m_lo = sched.m[static_cast<std::size_t>(t_lo)];
  double d_hi = sched.delta[static_cast<std::size_t>(t_hi)];
  double d_lo = sched.delta[static_cast<std::size_t>(t_lo)];
  double a = (1.0 - m_hi) / (1.0 - m_lo);
  double d_gap = transition_variance(sched, t_hi, t_lo);

  double marg_mean = (1.0 - m_lo) * z_b + m_lo * z_a;
  // Generous support: everything the two factors could plausibly cover.
  double spread = 10.0 * (std::sqrt(d_lo) + std::sqrt(std::max(d_hi, d_gap)));
  double lo = std::min(marg_mean, z_hi) - spread;
  double hi = std::max(marg_mean, z_hi) + spread;

  std::vector<double> logp(grid_n);
  double step = (hi - lo) / static_cast<double>(grid_n - 1);
  double peak = -1.0e300;
  for (std::size_t i = 0; i < grid_n; ++i) {
    double z = lo + step * static_cast<double>(i);
    double r1 = z - marg_mean;
    double trans_mean = a * z + (m_hi - a * m_lo) * z_a;
    double r2 = z_hi - trans_mean;
    logp[i] = -0.5 * (r1 * r1 / d_lo + r2 * r2 / d_gap);
    peak = std::max(peak, logp[i]);
  }
  if (std::exp(logp.front() - peak) > 1.0e-8 || std::exp(logp.back() - peak) > 1.0e-8)
    throw ValueError("posterior_oracle: grid too narrow for the requested case");

  double norm = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < grid_n; ++i) {
    double w = std::exp(logp[i] - peak);
    double z = lo + step * static_cast<double>(i);
    norm += w;
    mean += w * z;
  }
  mean /= norm;
  double var = 0.0;
  for (std::size_t i = 0; i < grid_n; ++i) {
    double w = std::exp(logp[i] - peak);
    double z = lo + step * static_cast<double>(i);
    var += w * (z - mean) * (z - mean);
  }
  var /= norm;
  return PosteriorMoments{mean, var};
}

// ---- kernel MMD ----

enum class MmdEstimator { biased, unbiased };

inline double squared_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc;
}

// Median pairwise distance over the pooled samples; 1.0 if degenerate.
inline double median_heuristic_bandwidth(const std::vector<Tensor>& xs,
                                         const std::vector<Tensor>& ys) {
  std::vector<const Tensor*> all;
  for (const auto& t : xs) all.push_back(&t);
  for (const auto& t : ys) all.push_back(&t);
  if (all.size() < 2) throw ValueError("median_heuristic_bandwidth: need at least 2 samples");
  std::vector<double> d;
  d.reserve(all.size() * (all.size() - 1) / 2);
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      d.push_back(std::sqrt(squared_distance(*all[i], *all[j])));
  std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  return med > 0.0 ? med : 1.0;
}

// Squared maximum mean discrepancy under an RBF kernel
// k(x,y) = exp(-|x-y|^2 / (2 bw^2)). The unbiased estimator can be
// negative; the biased one is always >= 0.
inline double mmd_squared(const std::vector<Tensor>& xs, const std::vector<Tensor>& ys,
                          double bandwidth, MmdEstimator est = MmdEstimator::biased) {
  if (xs.empty() || ys.empty()) throw ValueError("mmd_squared: sample sets must be non-empty");
  if (!(bandwidth > 0.0)) throw ValueError("mmd_squared: bandwidth must be positive");
  if (est == MmdEstimator::unbiased && (xs.size() < 2 || ys.size() < 2))
    throw ValueError("mmd_squared: unbiased estimator needs at least 2 samples per set");
  double g = 1.0 / (2.0 * bandwidth * bandwidth);
  auto k = [&](const Tensor& a, const Tensor& b) {
    return std::exp(-g * squared_distance(a, b));
  };
  double n = static_cast<double>(xs.size()), m = static_cast<double>(ys.size());
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < xs.size(); ++j)
      if (est == MmdEstimator::biased || i != j) kxx += k(xs[i], xs[j]);
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j)
      if (est == MmdEstimator::biased || i != j) kyy += k(ys[i], ys[j]);
  for (const auto& x : xs)
    for (const auto& y : ys) kxy += k(x, y);
  if (est == MmdEstimator::biased)
    return kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m);
  return kxx / (n * (n - 1.0)) + kyy / (m * (m - 1.0)) - 2.0 * kxy / (n * m);
}

// ---- task metrics ----

// Fraction of samples whose generated x-displacement sign matches the label
// (label 1 = positive shift, label 0 = negative).
inline double mode_accuracy(const std::vector<Tensor>& pre, const std::vector<Tensor>& gen,
                            const std::vector<int>& labels) {
  if (pre.size() != gen.size() || pre.size() != labels.size() || pre.empty())
    throw ValueError("mode_accuracy: inputs must be equal-length and non-empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    require_same_shape(pre[i], gen[i], "mode_accuracy");
    double dx = gen[i].data[0] - pre[i].data[0];
    if ((labels[i] == 1 && dx > 0.0) || (labels[i] == 0 && dx < 0.0)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pre.size());
}

// IoU between the thresholded change map |gen - pre| > threshold and the
// target mask. Empty union counts as a perfect match.
inline double layout_iou(const Tensor& gen, const Tensor& pre, const Tensor& mask,
                         double threshold) {
  require_same_shape(gen, pre, "layout_iou");
  require_same_shape(gen, mask, "layout_iou");
  if (!(threshold > 0.0)) throw ValueError("layout_iou: threshold must be positive");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    bool changed = std::abs(gen.data[i] - pre.data[i]) > threshold;
    bool masked = mask.data[i] != 0.0;
    inter += changed && masked;
    uni += changed || masked;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace bridgegen
