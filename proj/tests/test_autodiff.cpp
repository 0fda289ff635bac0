#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "bridgegen/autodiff.hpp"
#include "bridgegen/denoiser.hpp"
#include "bridgegen/rng.hpp"

using namespace bridgegen;
using Catch::Matchers::WithinAbs;

namespace {

// Builds the op under test from leaf vars and returns its output (any shape).
using BuildFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

Tensor rand_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  RngState rng{seed, 0};
  Tensor t = sample_standard_normal(rng, shape);
  for (double& v : t.data) v *= scale;
  return t;
}

// Reduces the op output against a fixed pseudo-random target so every
// element feeds the scalar with a distinct coefficient.
double eval_loss(const std::vector<Tensor>& inputs, const BuildFn& build) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  ad::Var y = build(tape, leaves);
  Tensor target = rand_tensor(tape.shape(y), 555);
  std::vector<double> w(tape.shape(y)[0]);
  for (std::size_t b = 0; b < w.size(); ++b) w[b] = 0.5 + 0.25 * static_cast<double>(b);
  ad::Var loss = tape.weighted_mse(y, tape.constant(target), w);
  return tape.val(loss)[0];
}

// Central-difference check of every element of every input.
void gradcheck(std::vector<Tensor> inputs, const BuildFn& build, double tol = 1e-6) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  ad::Var y = build(tape, leaves);
  Tensor target = rand_tensor(tape.shape(y), 555);
  std::vector<double> w(tape.shape(y)[0]);
  for (std::size_t b = 0; b < w.size(); ++b) w[b] = 0.5 + 0.25 * static_cast<double>(b);
  ad::Var loss = tape.weighted_mse(y, tape.constant(target), w);
  tape.backward(loss);

  const double h = 1e-5;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor analytic = tape.grad(leaves[i]);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      double keep = inputs[i].data[j];
      inputs[i].data[j] = keep + h;
      double up = eval_loss(inputs, build);
      inputs[i].data[j] = keep - h;
      double down = eval_loss(inputs, build);
      inputs[i].data[j] = keep;
      double numeric = (up - down) / (2.0 * h);
      double denom = std::max(1.0, std::abs(analytic.data[j]));
      INFO("input " << i << " element " << j << " analytic " << analytic.data[j] << " numeric "
                    << numeric);
      REQUIRE(std::abs(numeric - analytic.data[j]) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Tensor a = rand_tensor({2, 3}, 1);
  Tensor b = rand_tensor({2, 3}, 2);
  gradcheck({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.add(v[0], v[1]); });
  gradcheck({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.sub(v[0], v[1]); });
  gradcheck({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.mul(v[0], v[1]); });
  gradcheck({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
    return t.affine(v[0], 1.7, -0.3);
  });
  gradcheck({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.scale(v[0], -2.5); });
  gradcheck({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.silu(v[0]); });
}

TEST_CASE("broadcast bias and dense layer gradients match finite differences") {
  gradcheck({rand_tensor({3, 4}, 3), rand_tensor({4}, 4)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.add_bcast(v[0], v[1]); });
  gradcheck({rand_tensor({2, 3}, 5), rand_tensor({4, 3}, 6)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.linear(v[0], v[1]); });
  gradcheck({rand_tensor({2, 2, 3}, 7), rand_tensor({3, 4}, 8)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.matmul(v[0], v[1]); });
}

TEST_CASE("batched matmul gradients match finite differences") {
  gradcheck({rand_tensor({2, 2, 3}, 9), rand_tensor({2, 4, 3}, 10)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.bmm_nt(v[0], v[1]); });
  gradcheck({rand_tensor({2, 2, 4}, 11), rand_tensor({2, 4, 3}, 12)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.bmm_nn(v[0], v[1]); });
}

TEST_CASE("softmax rows sum to one and its gradient matches finite differences") {
  Tensor x = rand_tensor({2, 3, 4}, 13);
  {
    ad::Tape t;
    Tensor y = t.value(t.softmax_last(t.leaf(x)));
    for (std::size_t row = 0; row < 6; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += y.data[row * 4 + j];
      REQUIRE_THAT(s, WithinAbs(1.0, 1e-12));
    }
  }
  gradcheck({x}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
    return t.softmax_last(v[0]);
  });
}

TEST_CASE("shape ops route gradients exactly") {
  gradcheck({rand_tensor({2, 3}, 14), rand_tensor({2, 2}, 15)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.concat(v[0], v[1], 1); });
  gradcheck({rand_tensor({1, 3}, 16), rand_tensor({2, 3}, 17)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.concat(v[0], v[1], 0); });
  gradcheck({rand_tensor({2, 6}, 18)}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
    return t.reshape(v[0], {3, 4});
  });
  gradcheck({rand_tensor({5, 3}, 19)}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
    return t.gather_rows(v[0], {0, 2, 2, 4});  // repeated row accumulates
  });
}

TEST_CASE("conv stack gradients match finite differences") {
  gradcheck({rand_tensor({1, 2, 4, 4}, 20), rand_tensor({3, 2, 3, 3}, 21, 0.5),
             rand_tensor({3}, 22, 0.1)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) {
              return t.conv3x3(v[0], v[1], v[2]);
            });
  gradcheck({rand_tensor({2, 2, 4, 4}, 23)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.avgpool2(v[0]); });
  gradcheck({rand_tensor({2, 2, 2, 2}, 24)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) { return t.upsample2(v[0]); });
  gradcheck({rand_tensor({2, 3, 2, 2}, 25), rand_tensor({2, 3}, 26), rand_tensor({2, 3}, 27)},
            [](ad::Tape& t, const std::vector<ad::Var>& v) {
              return t.film_chw(v[0], v[1], v[2]);
            });
}

TEST_CASE("token/plane reinterpretations are mutually inverse") {
  Tensor x = rand_tensor({2, 3, 2, 4}, 28);
  ad::Tape t;
  ad::Var v = t.leaf(x);
  ad::Var tok = t.tokens_from_chw(v);
  REQUIRE(t.shape(tok) == Shape{2, 8, 3});
  ad::Var back = t.chw_from_tokens(tok, 2, 4);
  REQUIRE(t.value(back).data == x.data);

  gradcheck({x}, [](ad::Tape& tp, const std::vector<ad::Var>& v2) {
    return tp.tokens_from_chw(v2[0]);
  });
  gradcheck({rand_tensor({2, 8, 3}, 29)}, [](ad::Tape& tp, const std::vector<ad::Var>& v2) {
    return tp.chw_from_tokens(v2[0], 2, 4);
  });
}

TEST_CASE("weighted mse value and gradients are exact") {
  ad::Tape t;
  ad::Var pred = t.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  ad::Var target = t.constant(Tensor::zeros({2, 2}));
  ad::Var loss = t.weighted_mse(pred, target, {1.0, 3.0});
  // (1*(1+4)/2 + 3*(9+16)/2) / 2 = 20
  REQUIRE_THAT(t.val(loss)[0], WithinAbs(20.0, 1e-14));

  gradcheck({rand_tensor({2, 3}, 30), rand_tensor({2, 3}, 31)},
            [](ad::Tape& tp, const std::vector<ad::Var>& v) {
              return tp.add(tp.mul(v[0], v[0]), v[1]);  // composite graph
            });
}

TEST_CASE("backward rejects non-scalar roots and ignores constants") {
  ad::Tape t;
  ad::Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(t.backward(x), ValueError);

  ad::Var c = t.constant(Tensor({2}, {3.0, 4.0}));
  ad::Var loss = t.weighted_mse(t.mul(x, c), t.constant(Tensor::zeros({2})), {1.0, 1.0});
  t.backward(loss);
  Tensor gc = t.grad(c);
  REQUIRE(gc.data == std::vector<double>{0.0, 0.0});
  Tensor gx = t.grad(x);
  REQUIRE(gx.data[0] != 0.0);
}

TEST_CASE("backward is deterministic across identical tapes") {
  auto run = [] {
    ad::Tape t;
    ad::Var x = t.leaf(rand_tensor({3, 5}, 40));
    ad::Var w = t.leaf(rand_tensor({4, 5}, 41));
    ad::Var y = t.silu(t.linear(x, w));
    ad::Var loss = t.weighted_mse(y, t.constant(rand_tensor({3, 4}, 42)), {1.0, 1.0, 1.0});
    t.backward(loss);
    return std::pair{t.grad(x).data, t.grad(w).data};
  };
  auto [gx1, gw1] = run();
  auto [gx2, gw2] = run();
  REQUIRE(gx1 == gx2);
  REQUIRE(gw1 == gw2);
}

TEST_CASE("cross attention reproduces the frozen softmax example") {
  Tensor q({1, 2}, {1.0, 0.0});
  Tensor k({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor v({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor out = cross_attention_ref(q, k, v);
  // softmax([1/sqrt(2), 0]) against an identity value matrix.
  REQUIRE_THAT(out.data[0], WithinAbs(0.669761549326657, 1e-12));
  REQUIRE_THAT(out.data[1], WithinAbs(0.330238450673343, 1e-12));

  SECTION("output rows stay in the convex hull of the value rows") {
    Tensor q2 = rand_tensor({3, 4}, 50);
    Tensor k2 = rand_tensor({5, 4}, 51);
    Tensor v2 = rand_tensor({5, 4}, 52);
    Tensor o2 = cross_attention_ref(q2, k2, v2);
    for (std::size_t col = 0; col < 4; ++col) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t r = 0; r < 5; ++r) {
        lo = std::min(lo, v2.data[r * 4 + col]);
        hi = std::max(hi, v2.data[r * 4 + col]);
      }
      for (std::size_t r = 0; r < 3; ++r) {
        REQUIRE(o2.data[r * 4 + col] >= lo - 1e-12);
        REQUIRE(o2.data[r * 4 + col] <= hi + 1e-12);
      }
    }
  }

  SECTION("permuting keys and values together changes nothing") {
    Tensor q2 = rand_tensor({2, 3}, 53);
    Tensor k2 = rand_tensor({4, 3}, 54);
    Tensor v2 = rand_tensor({4, 3}, 55);
    Tensor base = cross_attention_ref(q2, k2, v2);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor kp = Tensor::zeros({4, 3}), vp = Tensor::zeros({4, 3});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        kp.data[r * 3 + c] = k2.data[perm[r] * 3 + c];
        vp.data[r * 3 + c] = v2.data[perm[r] * 3 + c];
      }
    Tensor permuted = cross_attention_ref(q2, kp, vp);
    for (std::size_t i = 0; i < base.size(); ++i)
      REQUIRE_THAT(permuted.data[i], WithinAbs(base.data[i], 1e-12));
  }
}

TEST_CASE("tape attention chain matches the reference and is differentiable") {
  // scores = q k^T / sqrt(d), weights = softmax, out = weights v
  Tensor q({1, 1, 2}, {1.0, 0.0});
  Tensor k({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor v({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  ad::Tape t;
  ad::Var scores = t.scale(t.bmm_nt(t.leaf(q), t.leaf(k)), 1.0 / std::sqrt(2.0));
  ad::Var out = t.bmm_nn(t.softmax_last(scores), t.leaf(v));
  Tensor val = t.value(out);
  REQUIRE_THAT(val.data[0], WithinAbs(0.669761549326657, 1e-12));
  REQUIRE_THAT(val.data[1], WithinAbs(0.330238450673343, 1e-12));

  gradcheck({rand_tensor({2, 2, 3}, 60), rand_tensor({2, 4, 3}, 61), rand_tensor({2, 4, 3}, 62)},
            [](ad::Tape& tp, const std::vector<ad::Var>& vv) {
              ad::Var s = tp.scale(tp.bmm_nt(vv[0], vv[1]), 1.0 / std::sqrt(3.0));
              return tp.bmm_nn(tp.softmax_last(s), vv[2]);
            });
}
