#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bridgegen/conditioning.hpp"
#include "bridgegen/rng.hpp"

using namespace bridgegen;
using Catch::Matchers::WithinAbs;

TEST_CASE("condition payload constructors validate their inputs") {
  REQUIRE(ConditionPayload::make_label(3).kind == CondKind::label);
  REQUIRE_THROWS_AS(ConditionPayload::make_label(-1), ValueError);

  Tensor mask({2, 2}, {0.0, 1.0, 1.0, 0.0});
  ConditionPayload lay = ConditionPayload::make_layout(mask);
  REQUIRE(lay.kind == CondKind::layout);
  REQUIRE(lay.num_classes == 2);
  REQUIRE_THROWS_AS(ConditionPayload::make_layout(Tensor({2, 2}, {0.0, 0.5, 1.0, 0.0})),
                    ValueError);
  REQUIRE_THROWS_AS(ConditionPayload::make_layout(Tensor({4}, {0.0, 1.0, 1.0, 0.0})),
                    ValueError);

  Tensor map({2, 2}, {0.0, 2.0, 1.0, 2.0});
  REQUIRE(ConditionPayload::make_semantic(map, 3).kind == CondKind::semantic);
  REQUIRE_THROWS_AS(ConditionPayload::make_semantic(map, 2), ValueError);  // id 2 out of range
  REQUIRE_THROWS_AS(ConditionPayload::make_semantic(Tensor({2, 2}, {0.0, 1.5, 1.0, 0.0}), 3),
                    ValueError);

  REQUIRE(ConditionPayload::make_none().kind == CondKind::none);
}

TEST_CASE("condition kind names round-trip") {
  for (CondKind k : {CondKind::label, CondKind::layout, CondKind::semantic, CondKind::none})
    REQUIRE(cond_kind_from_name(cond_kind_name(k)) == k);
  REQUIRE_THROWS_AS(cond_kind_from_name("bogus"), ValueError);
}

TEST_CASE("encoder config enforces token geometry") {
  CondEncoderConfig cfg;
  cfg.token_dim = 16;
  REQUIRE_NOTHROW(cfg.validate());
  cfg.token_dim = 18;  // not a multiple of 4
  REQUIRE_THROWS_AS(cfg.validate(), ValueError);
  cfg.token_dim = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("patch histograms are per-patch class fractions") {
  // 4x4 map, 2x2 patches, 3 classes.
  Tensor map({4, 4}, {0, 0, 1, 1,
                      0, 2, 1, 1,
                      2, 2, 0, 0,
                      2, 2, 0, 1});
  Tensor hist = patch_histograms(map, 2, 3);
  REQUIRE(hist.shape == Shape{4, 3});
  // patch (0,0): {0,0,0,2} -> 3/4 class 0, 1/4 class 2
  REQUIRE_THAT(hist.data[0], WithinAbs(0.75, 1e-15));
  REQUIRE_THAT(hist.data[1], WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(hist.data[2], WithinAbs(0.25, 1e-15));
  // patch (0,1): all class 1
  REQUIRE_THAT(hist.data[4], WithinAbs(1.0, 1e-15));
  // every row sums to one
  for (std::size_t r = 0; r < 4; ++r)
    REQUIRE_THAT(hist.data[r * 3] + hist.data[r * 3 + 1] + hist.data[r * 3 + 2],
                 WithinAbs(1.0, 1e-12));

  REQUIRE_THROWS_AS(patch_histograms(map, 3, 3), ValueError);  // 4 % 3 != 0
  REQUIRE_THROWS_AS(patch_histograms(Tensor({2, 2}, {0.0, 3.0, 1.0, 0.0}), 2, 3), ValueError);
}

TEST_CASE("patch position code interleaves row/column waves per wavelength") {
  Tensor code = patch_position_code(3, 2, 8);
  REQUIRE(code.shape == Shape{6, 8});
  // dim 8 -> two wavelength groups: 100^0 = 1 and 100^1 = 100.
  int y = 2, x = 1;
  const double* row = code.data.data() + (static_cast<std::size_t>(y) * 2 + x) * 8;
  REQUIRE_THAT(row[0], WithinAbs(std::sin(2.0), 1e-15));
  REQUIRE_THAT(row[1], WithinAbs(std::cos(2.0), 1e-15));
  REQUIRE_THAT(row[2], WithinAbs(std::sin(1.0), 1e-15));
  REQUIRE_THAT(row[3], WithinAbs(std::cos(1.0), 1e-15));
  REQUIRE_THAT(row[4], WithinAbs(std::sin(0.02), 1e-15));
  REQUIRE_THAT(row[5], WithinAbs(std::cos(0.02), 1e-15));
  REQUIRE_THAT(row[6], WithinAbs(std::sin(0.01), 1e-15));
  REQUIRE_THAT(row[7], WithinAbs(std::cos(0.01), 1e-15));

  // distinct grid cells get distinct codes
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) {
      double diff = 0.0;
      for (std::size_t c = 0; c < 8; ++c)
        diff = std::max(diff, std::abs(code.data[i * 8 + c] - code.data[j * 8 + c]));
      REQUIRE(diff > 1e-6);
    }

  REQUIRE_THROWS_AS(patch_position_code(0, 2, 8), ValueError);
  REQUIRE_THROWS_AS(patch_position_code(2, 2, 6), ValueError);
}

TEST_CASE("encode_condition produces the documented token layouts") {
  CondEncoderConfig cfg;
  cfg.label_vocab = 3;
  cfg.num_classes = 3;
  cfg.patch = 2;
  cfg.token_dim = 8;
  RngState rng{21, 0};
  CondEncoderParams enc = init_cond_encoder(rng, cfg);

  SECTION("label lookup copies the table row") {
    ConditionTokens tok = encode_condition(enc, ConditionPayload::make_label(2));
    REQUIRE(tok.tokens.shape == Shape{1, 8});
    for (std::size_t j = 0; j < 8; ++j)
      REQUIRE(tok.tokens.data[j] == enc.label_table.data[2 * 8 + j]);
    REQUIRE_THROWS_AS(encode_condition(enc, ConditionPayload::make_label(3)), ValueError);
  }

  SECTION("spatial payloads mix class content with position codes") {
    Tensor map({4, 4}, {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 0, 0, 2, 2, 0, 0});
    ConditionTokens tok =
        encode_condition(enc, ConditionPayload::make_semantic(map, 3));
    REQUIRE(tok.tokens.shape == Shape{4, 8});
    // Patch (0,0) is pure class 0: token = class_table row 0 + position code.
    Tensor pos = patch_position_code(2, 2, 8);
    for (std::size_t j = 0; j < 8; ++j)
      REQUIRE_THAT(tok.tokens.data[j],
                   WithinAbs(enc.class_table.data[j] + pos.data[j], 1e-13));
  }

  SECTION("a layout mask uses the same pathway") {
    Tensor mask({4, 4}, {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0});
    ConditionTokens tok = encode_condition(enc, ConditionPayload::make_layout(mask));
    REQUIRE(tok.tokens.shape == Shape{4, 8});
  }

  SECTION("no condition yields the learned null token") {
    ConditionTokens tok = encode_condition(enc, ConditionPayload::make_none());
    REQUIRE(tok.tokens.shape == Shape{1, 8});
    REQUIRE(tok.tokens.data == enc.null_token.data);
  }
}

TEST_CASE("cond encoder init is deterministic in the seed") {
  CondEncoderConfig cfg;
  RngState a{5, 0}, b{5, 0};
  CondEncoderParams pa = init_cond_encoder(a, cfg);
  CondEncoderParams pb = init_cond_encoder(b, cfg);
  REQUIRE(pa.label_table.data == pb.label_table.data);
  REQUIRE(pa.class_table.data == pb.class_table.data);
  REQUIRE(pa.null_token.data == pb.null_token.data);
}
