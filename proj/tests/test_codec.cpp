#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>

#include "bridgegen/codec.hpp"

using namespace bridgegen;
using Catch::Matchers::WithinAbs;

namespace {

// Jacobi eigenvalue sweep for a symmetric 4x4 matrix; returns eigenvalues
// sorted descending. Plenty for a reference spectrum in a test.
std::array<double, 4> sym4_eigenvalues(std::array<std::array<double, 4>, 4> a) {
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 4; ++p)
      for (int q = p + 1; q < 4; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-26) break;
    for (int p = 0; p < 4; ++p) {
      for (int q = p + 1; q < 4; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < 4; ++i) {
          double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (int i = 0; i < 4; ++i) {
          double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
      }
    }
  }
  std::array<double, 4> ev{a[0][0], a[1][1], a[2][2], a[3][3]};
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

}  // namespace

TEST_CASE("identity codec passes tensors through untouched") {
  CodecParams c = make_identity_codec({2, 3});
  REQUIRE(c.latent_shape == Shape{2, 3});
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(codec_encode(c, x).data == x.data);
  REQUIRE(codec_decode(c, x).data == x.data);
  REQUIRE(codec_reconstruction_mse(c, {x}) == 0.0);

  REQUIRE_THROWS_AS(codec_encode(c, Tensor::zeros({3, 2})), ValueError);
  std::size_t visited = 0;
  c.visit([&](const std::string&, const Tensor&) { ++visited; });
  REQUIRE(visited == 0);  // nothing trainable
}

TEST_CASE("linear codec validates geometry and round-trips shapes") {
  RngState rng{10, 0};
  CodecParams c = init_linear_codec(rng, {6}, {2});
  REQUIRE(c.enc_w.shape == Shape{2, 6});
  REQUIRE(c.dec_w.shape == Shape{6, 2});
  Tensor x = sample_standard_normal(rng, {6});
  Tensor z = codec_encode(c, x);
  REQUIRE(z.shape == Shape{2});
  Tensor back = codec_decode(c, z);
  REQUIRE(back.shape == Shape{6});

  REQUIRE_THROWS_AS(init_linear_codec(rng, {4}, {4}), ValueError);
  REQUIRE_THROWS_AS(init_linear_codec(rng, {4}, {6}), ValueError);
  REQUIRE_THROWS_AS(codec_decode(c, Tensor::zeros({3})), ValueError);

  std::vector<std::string> names;
  c.visit([&](const std::string& n, const Tensor&) { names.push_back(n); });
  REQUIRE(names == std::vector<std::string>{"codec.enc_w", "codec.enc_b", "codec.dec_w",
                                            "codec.dec_b"});
}

TEST_CASE("trained linear codec reaches the principal-subspace optimum") {
  // Anisotropic gaussian: a rank-2 bottleneck can keep the two large axes,
  // so the optimal MSE is the sum of the two small sample eigenvalues.
  RngState rng{2025, 0};
  const std::size_t n = 512;
  const double sd[4] = {2.0, 1.0, 0.5, 0.2};
  std::vector<Tensor> data;
  data.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = Tensor::zeros({4});
    for (std::size_t j = 0; j < 4; ++j) x.data[j] = sd[j] * next_normal(rng);
    data.push_back(std::move(x));
  }

  // Sample covariance about the sample mean.
  double mean[4] = {0, 0, 0, 0};
  for (const Tensor& x : data)
    for (int j = 0; j < 4; ++j) mean[j] += x.data[static_cast<std::size_t>(j)];
  for (double& m : mean) m /= static_cast<double>(n);
  std::array<std::array<double, 4>, 4> cov{};
  for (const Tensor& x : data)
    for (int p = 0; p < 4; ++p)
      for (int q = 0; q < 4; ++q)
        cov[p][q] += (x.data[static_cast<std::size_t>(p)] - mean[p]) *
                     (x.data[static_cast<std::size_t>(q)] - mean[q]) / static_cast<double>(n);
  std::array<double, 4> ev = sym4_eigenvalues(cov);
  double optimal = (ev[2] + ev[3]) / 4.0;  // per-element MSE floor

  CodecParams codec = init_linear_codec(rng, {4}, {2});
  CodecTrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch = 64;
  cfg.lr = 5e-3;
  std::vector<double> history = train_codec(codec, data, cfg, rng);
  REQUIRE(history.size() == 3000);
  REQUIRE(history.back() < history.front());

  double mse = codec_reconstruction_mse(codec, data);
  INFO("mse " << mse << " optimal " << optimal);
  REQUIRE(mse > 0.995 * optimal);  // cannot beat the spectral floor
  REQUIRE(mse < 1.10 * optimal);   // and should get close to it
}

TEST_CASE("codec training is deterministic in the seed") {
  RngState ra{3, 0}, rb{3, 0};
  CodecParams a = init_linear_codec(ra, {4}, {2});
  CodecParams b = init_linear_codec(rb, {4}, {2});
  std::vector<Tensor> data;
  RngState rd{8, 0};
  for (int i = 0; i < 32; ++i) data.push_back(sample_standard_normal(rd, {4}));
  CodecTrainConfig cfg;
  cfg.steps = 50;
  train_codec(a, data, cfg, ra);
  train_codec(b, data, cfg, rb);
  REQUIRE(a.enc_w.data == b.enc_w.data);
  REQUIRE(a.dec_w.data == b.dec_w.data);
  REQUIRE(a.dec_b.data == b.dec_b.data);
}

TEST_CASE("train_codec rejects bad setups") {
  CodecParams ident = make_identity_codec({4});
  CodecTrainConfig cfg;
  RngState rng{0, 0};
  REQUIRE_THROWS_AS(train_codec(ident, {Tensor::zeros({4})}, cfg, rng), ValueError);

  CodecParams lin = init_linear_codec(rng, {4}, {2});
  REQUIRE_THROWS_AS(train_codec(lin, {}, cfg, rng), ValueError);
  REQUIRE_THROWS_AS(train_codec(lin, {Tensor::zeros({5})}, cfg, rng), ValueError);
}
