#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bridgegen/rng.hpp"
#include "bridgegen/schedule.hpp"

using namespace bridgegen;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("schedule tables follow the closed form") {
  BridgeSchedule sched = build_schedule(10, 1.5);
  REQUIRE(sched.m.size() == 11);
  REQUIRE(sched.delta.size() == 11);
  REQUIRE(sched.m[0] == 0.0);
  REQUIRE(sched.m[10] == 1.0);
  REQUIRE_THAT(sched.m[4], WithinAbs(0.4, 1e-15));
  // delta_t = 2 s m_t (1 - m_t); both ends carry zero variance.
  REQUIRE(sched.delta[0] == 0.0);
  REQUIRE(sched.delta[10] == 0.0);
  REQUIRE_THAT(sched.delta[4], WithinAbs(0.72, 1e-15));
  REQUIRE_THAT(sched.delta[7], WithinAbs(0.63, 1e-15));

  REQUIRE_THROWS_AS(build_schedule(1), ValueError);
  REQUIRE_THROWS_AS(build_schedule(10, 0.0), ValueError);
  REQUIRE_THROWS_AS(build_schedule(10, -1.0), ValueError);
  REQUIRE_THROWS_AS(build_schedule(10, std::numeric_limits<double>::infinity()), ValueError);
}

TEST_CASE("transition variance matches the frozen value and stays non-negative") {
  BridgeSchedule sched = build_schedule(10, 1.5);
  REQUIRE_THAT(transition_variance(sched, 7, 4), WithinAbs(0.45, 1e-15));

  REQUIRE_THROWS_AS(transition_variance(sched, 4, 4), ValueError);
  REQUIRE_THROWS_AS(transition_variance(sched, 3, 6), ValueError);
  REQUIRE_THROWS_AS(transition_variance(sched, 11, 4), ValueError);

  BridgeSchedule big = build_schedule(30, 0.8);
  for (int lo = 0; lo < big.T; ++lo)
    for (int hi = lo + 1; hi <= big.T; ++hi) REQUIRE(transition_variance(big, hi, lo) >= 0.0);
}

TEST_CASE("transition variances compose along any interior split") {
  // gap(t2, t0) = gap(t2, t1) + a(t2, t1)^2 gap(t1, t0)
  BridgeSchedule sched = build_schedule(50, 1.3);
  RngState rng{5, 0};
  for (int trial = 0; trial < 200; ++trial) {
    int t0 = static_cast<int>(next_u64(rng) % 48);
    int t1 = t0 + 1 + static_cast<int>(next_u64(rng) % static_cast<std::uint64_t>(49 - t0));
    int t2 = t1 + 1 + static_cast<int>(next_u64(rng) % static_cast<std::uint64_t>(50 - t1));
    double a21 = (1.0 - sched.m[static_cast<std::size_t>(t2)]) /
                 (1.0 - sched.m[static_cast<std::size_t>(t1)]);
    double lhs = transition_variance(sched, t2, t0);
    double rhs = transition_variance(sched, t2, t1) + a21 * a21 * transition_variance(sched, t1, t0);
    REQUIRE_THAT(lhs, WithinAbs(rhs, 1e-12));
  }
}

TEST_CASE("posterior coefficients match frozen references") {
  // T=10, s=1.5, (t_hi, t_lo) = (7, 4)
  BridgeSchedule sched = build_schedule(10, 1.5);
  StepCoefficients c = posterior_coefficients(sched, 7, 4);
  REQUIRE_THAT(c.c_b, WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(c.c_a, WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(c.c_eps, WithinRel(0.42857142857142855, 1e-13));
  REQUIRE_THAT(c.var, WithinRel(0.51428571428571423, 1e-13));

  // T=16, s=0.7, (13, 5)
  BridgeSchedule sched2 = build_schedule(16, 0.7);
  StepCoefficients c2 = posterior_coefficients(sched2, 13, 5);
  REQUIRE_THAT(c2.c_eps, WithinRel(0.61538461538461531, 1e-13));
  REQUIRE_THAT(c2.var, WithinRel(0.26923076923076927, 1e-13));
  REQUIRE_THAT(c2.c_b + c2.c_a, WithinAbs(1.0, 1e-12));
}

TEST_CASE("posterior coefficient identities hold across schedules") {
  // For this schedule family the mean is a convex combination that
  // degenerates to weight 1 on z_t, independent of the variance scale s.
  for (double s : {0.25, 1.0, 3.0}) {
    BridgeSchedule sched = build_schedule(40, s);
    for (int lo = 0; lo < 39; ++lo) {
      for (int hi = lo + 1; hi <= 39; ++hi) {
        StepCoefficients c = posterior_coefficients(sched, hi, lo);
        REQUIRE_THAT(c.c_b + c.c_a, WithinAbs(1.0, 1e-12));
        REQUIRE_THAT(c.c_b, WithinAbs(1.0, 1e-12));
        REQUIRE(c.var >= 0.0);
        REQUIRE(std::isfinite(c.c_eps));
      }
    }
  }
}

TEST_CASE("posterior coefficients reject the degenerate start step") {
  BridgeSchedule sched = build_schedule(10, 1.0);
  REQUIRE_THROWS_WITH(posterior_coefficients(sched, 10, 5),
                      Catch::Matchers::ContainsSubstring("start rule"));
  REQUIRE_THROWS_AS(posterior_coefficients(sched, 5, 5), ValueError);
  REQUIRE_THROWS_AS(posterior_coefficients(sched, 5, 7), ValueError);
  REQUIRE_THROWS_AS(posterior_coefficients(sched, 12, 5), ValueError);
}

TEST_CASE("start rule matches the t_hi -> T limit") {
  BridgeSchedule sched = build_schedule(10, 1.5);
  StepCoefficients c = start_rule_coefficients(sched, 3);
  REQUIRE(c.c_b == 1.0);
  REQUIRE(c.c_a == 0.0);
  REQUIRE_THAT(c.c_eps, WithinAbs(0.7, 1e-15));
  REQUIRE_THAT(c.var, WithinAbs(0.63, 1e-15));

  StepCoefficients c0 = start_rule_coefficients(sched, 0);
  REQUIRE(c0.c_eps == 1.0);
  REQUIRE(c0.var == 0.0);

  REQUIRE_THROWS_AS(start_rule_coefficients(sched, 10), ValueError);
}

TEST_CASE("inference step grids are decreasing, pinned, and deduplicated") {
  REQUIRE(inference_steps(10, 2) == std::vector<int>{10, 5, 0});
  REQUIRE(inference_steps(10, 3) == std::vector<int>{10, 7, 3, 0});
  REQUIRE(inference_steps(10, 1) == std::vector<int>{10, 0});

  std::vector<int> full = inference_steps(10, 10);
  REQUIRE(full.size() == 11);
  for (int i = 0; i <= 10; ++i) REQUIRE(full[static_cast<std::size_t>(i)] == 10 - i);

  for (int T : {7, 50, 333}) {
    for (int S = 1; S <= T; S += std::max(1, T / 7)) {
      std::vector<int> steps = inference_steps(T, S);
      REQUIRE(steps.front() == T);
      REQUIRE(steps.back() == 0);
      for (std::size_t i = 1; i < steps.size(); ++i) REQUIRE(steps[i] < steps[i - 1]);
    }
  }

  REQUIRE_THROWS_AS(inference_steps(1, 1), ValueError);
  REQUIRE_THROWS_AS(inference_steps(10, 0), ValueError);
  REQUIRE_THROWS_AS(inference_steps(10, 11), ValueError);
}
