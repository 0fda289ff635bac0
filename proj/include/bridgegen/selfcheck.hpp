#pragma once

// Fast internal consistency battery: schedule identities, the reverse-step
// posterior against an independent quadrature oracle, Monte-Carlo marginal
// agreement, and analytic-vs-finite-difference gradients. Runs in well
// under a minute; every check is deterministic.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "bridgegen/bridge.hpp"
#include "bridgegen/eval.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/schedule.hpp"
#include "bridgegen/training.hpp"

namespace bridgegen {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelfcheckOptions {
  // Fault-injection hook: evaluates the reverse-step mean with the residual
  // coefficient's sign flipped. The posterior check must then fail, which
  // demonstrates the oracle would catch that class of sign error.
  bool flip_ceps_sign = false;
};

namespace detail {

inline std::string fmt_err(const char* what, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s %.3g", what, v);
  return buf;
}

}  // namespace detail

inline CheckResult check_schedule_identities() {
  CheckResult r{"schedule-identities", false, ""};
  BridgeSchedule sched = build_schedule(1000, 1.7);
  double max_err = 0.0;
  if (sched.m[0] != 0.0 || sched.m.back() != 1.0 || sched.delta[0] != 0.0 ||
      sched.delta.back() != 0.0) {
    r.detail = "endpoints not pinned";
    return r;
  }
  double mean_coef = 1.0, var_acc = 0.0;
  for (int t = 1; t <= sched.T; ++t) {
    double mt = sched.m[static_cast<std::size_t>(t)];
    double direct = 2.0 * sched.s * static_cast<double>(t) *
                    static_cast<double>(sched.T - t) /
                    (static_cast<double>(sched.T) * static_cast<double>(sched.T));
    max_err = std::max(max_err, std::abs(direct - sched.delta[static_cast<std::size_t>(t)]));
    // One-step mean/variance composition must reproduce the marginal.
    double a = (1.0 - mt) / (1.0 - sched.m[static_cast<std::size_t>(t - 1)]);
    mean_coef *= a;
    var_acc = a * a * var_acc + transition_variance(sched, t, t - 1);
    if (t < sched.T) {
      max_err = std::max(max_err, std::abs(mean_coef - (1.0 - mt)));
      max_err = std::max(max_err, std::abs(var_acc - sched.delta[static_cast<std::size_t>(t)]));
      max_err = std::max(
          max_err, std::abs(transition_variance(sched, t, 0) -
                            sched.delta[static_cast<std::size_t>(t)]));
    }
  }
  max_err = std::max(max_err, std::abs(var_acc));  // full chain returns to zero variance
  r.pass = max_err < 1.0e-12;
  r.detail = detail::fmt_err("max identity error", max_err);
  return r;
}

inline CheckResult check_posterior_oracle(bool flip_ceps_sign) {
  CheckResult r{"posterior-oracle", false, ""};
  BridgeSchedule sched = build_schedule(50);
  RngState rng{20260814, 0};
  double sign = flip_ceps_sign ? 1.0 : -1.0;
  double max_mean_err = 0.0, max_var_err = 0.0;
  for (int c = 0; c < 100; ++c) {
    int t_lo = 1 + static_cast<int>(next_u64(rng) % static_cast<std::uint64_t>(sched.T - 2));
    int t_hi =
        t_lo + 1 +
        static_cast<int>(next_u64(rng) % static_cast<std::uint64_t>(sched.T - 1 - t_lo));
    double z_b = 2.0 * next_normal(rng);
    double z_a = 2.0 * next_normal(rng);
    double z_hi = 2.0 * next_normal(rng);
    StepCoefficients co = posterior_coefficients(sched, t_hi, t_lo);
    double residual = z_hi - z_b;  // exact network target at t_hi
    double mean_cf = co.c_b * z_hi + co.c_a * z_a + sign * co.c_eps * residual;
    PosteriorMoments oracle = posterior_oracle(sched, z_b, z_a, z_hi, t_hi, t_lo);
    max_mean_err = std::max(max_mean_err, std::abs(mean_cf - oracle.mean));
    max_var_err = std::max(max_var_err, std::abs(co.var - oracle.var));
  }
  r.pass = max_mean_err < 1.0e-6 && max_var_err < 1.0e-6;
  r.detail = detail::fmt_err("max mean error", max_mean_err) + ", " +
             detail::fmt_err("max var error", max_var_err);
  return r;
}

inline CheckResult check_marginal_mc() {
  CheckResult r{"marginal-mc", false, ""};
  BridgeSchedule sched = build_schedule(100);
  RngState rng{977, 0};
  double worst = 0.0;
  bool pass = true;
  for (int t : {25, 50, 75}) {
    for (MarginalMode mode : {MarginalMode::direct, MarginalMode::chain}) {
      MarginalCheckReport rep = marginal_stats_check(sched, -0.7, 1.3, t, 20000, rng, mode);
      pass = pass && rep.pass;
      worst = std::max({worst, std::abs(rep.z_mean), std::abs(rep.z_var)});
    }
  }
  r.pass = pass;
  r.detail = detail::fmt_err("worst |z|", worst);
  return r;
}

namespace detail {

// Loss as a pure function of the parameters: a fixed rng seed makes every
// evaluation use identical step draws and noise.
inline double loss_at(const ModelParams& model, const BridgeSchedule& sched,
                      const std::vector<const LatentSample*>& batch) {
  RngState rng{4242, 0};
  return training_loss(model, sched, batch, WeightMode::uniform, false, rng).loss;
}

inline double gradcheck_worst(ModelParams& model, const BridgeSchedule& sched,
                              const std::vector<const LatentSample*>& batch,
                              std::size_t probes, RngState& pick) {
  RngState rng{4242, 0};
  LossResult res = training_loss(model, sched, batch, WeightMode::uniform, true, rng);
  std::vector<Tensor*> params;
  model.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
  double worst = 0.0;
  double h = 1.0e-5;
  for (std::size_t p = 0; p < probes; ++p) {
    std::size_t slot = static_cast<std::size_t>(next_u64(pick) % params.size());
    Tensor& tensor = *params[slot];
    std::size_t j = static_cast<std::size_t>(next_u64(pick) % tensor.size());
    double keep = tensor.data[j];
    tensor.data[j] = keep + h;
    double up = loss_at(model, sched, batch);
    tensor.data[j] = keep - h;
    double dn = loss_at(model, sched, batch);
    tensor.data[j] = keep;
    double fd = (up - dn) / (2.0 * h);
    double an = res.grads[slot].data[j];
    double rel = std::abs(fd - an) / std::max(1.0e-8, std::abs(fd) + std::abs(an));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace detail

inline CheckResult check_gradients() {
  CheckResult r{"gradcheck", false, ""};
  RngState rng{31337, 0};
  double worst = 0.0;

  {  // mlp body on label-conditioned 2-D latents
    DenoiserConfig dc;
    dc.arch = DenoiserArch::mlp;
    dc.latent_dim = 2;
    dc.hidden = 8;
    dc.blocks = 1;
    dc.attn_dim = 8;
    dc.token_dim = 8;
    dc.time_dim = 8;
    CondEncoderConfig cc;
    cc.label_vocab = 2;
    cc.token_dim = 8;
    ModelParams model = init_model(rng, dc, cc);
    BridgeSchedule sched = build_schedule(20);
    std::vector<LatentSample> data;
    for (int i = 0; i < 3; ++i) {
      LatentSample s;
      s.z_a = sample_standard_normal(rng, {2});
      s.z_b = sample_standard_normal(rng, {2});
      s.cond = ConditionPayload::make_label(i % 2);
      data.push_back(std::move(s));
    }
    std::vector<const LatentSample*> batch{&data[0], &data[1], &data[2]};
    worst = std::max(worst, detail::gradcheck_worst(model, sched, batch, 40, rng));
  }

  {  // conv body on layout-conditioned 8x8 latents
    DenoiserConfig dc;
    dc.arch = DenoiserArch::conv;
    dc.hidden = 4;
    dc.attn_dim = 16;
    dc.token_dim = 8;
    dc.time_dim = 8;
    dc.img_h = 8;
    dc.img_w = 8;
    dc.img_c = 1;
    CondEncoderConfig cc;
    cc.num_classes = 2;
    cc.patch = 4;
    cc.token_dim = 8;
    ModelParams model = init_model(rng, dc, cc);
    BridgeSchedule sched = build_schedule(20);
    std::vector<LatentSample> data;
    for (int i = 0; i < 2; ++i) {
      LatentSample s;
      s.z_a = sample_standard_normal(rng, {8, 8});
      s.z_b = sample_standard_normal(rng, {8, 8});
      Tensor mask = Tensor::zeros({8, 8});
      for (std::size_t p = 0; p < 16; ++p) mask.data[(p + 3 * i) % 64] = 1.0;
      s.cond = ConditionPayload::make_layout(std::move(mask));
      data.push_back(std::move(s));
    }
    std::vector<const LatentSample*> batch{&data[0], &data[1]};
    worst = std::max(worst, detail::gradcheck_worst(model, sched, batch, 25, rng));
  }

  r.pass = worst < 1.0e-4;
  r.detail = detail::fmt_err("worst relative error", worst);
  return r;
}

inline std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opts = {}) {
  std::vector<CheckResult> out;
  out.push_back(check_schedule_identities());
  out.push_back(check_posterior_oracle(opts.flip_ceps_sign));
  out.push_back(check_marginal_mc());
  out.push_back(check_gradients());
  return out;
}

}  // namespace bridgegen
