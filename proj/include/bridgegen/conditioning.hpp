#pragma once

// Event-condition payloads and their token encodings. Every condition kind
// is reduced to a token matrix [M, token_dim] consumed by cross-attention:
//   label     -> one learned embedding row
//   layout    -> per-patch class histograms (binary mask, 2 classes)
//   semantic  -> per-patch class histograms over K classes
//   none      -> one learned null token
// Histogram tokens are class fractions times a learned class table plus a
// fixed 2-D sinusoidal position code over the patch grid.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bridgegen/rng.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen {

enum class CondKind { label, layout, semantic, none };

inline std::string cond_kind_name(CondKind k) {
  switch (k) {
    case CondKind::label: return "label";
    case CondKind::layout: return "layout";
    case CondKind::semantic: return "semantic";
    case CondKind::none: return "none";
  }
  throw ValueError("unknown condition kind");
}

inline CondKind cond_kind_from_name(const std::string& name) {
  if (name == "label") return CondKind::label;
  if (name == "layout") return CondKind::layout;
  if (name == "semantic") return CondKind::semantic;
  if (name == "none") return CondKind::none;
  throw ValueError("unknown condition kind: " + name);
}

struct ConditionPayload {
  CondKind kind = CondKind::none;
  int label = -1;
  Tensor map;           // [H, W] class ids for layout/semantic
  int num_classes = 0;  // classes represented in `map`

  static ConditionPayload make_label(int label) {
    if (label < 0) throw ValueError("condition label must be >= 0");
    ConditionPayload p;
    p.kind = CondKind::label;
    p.label = label;
    return p;
  }

  static ConditionPayload make_layout(Tensor mask) {
    if (mask.rank() != 2) throw ValueError("layout mask must be rank 2");
    for (double v : mask.data)
      if (v != 0.0 && v != 1.0) throw ValueError("layout mask entries must be 0 or 1");
    ConditionPayload p;
    p.kind = CondKind::layout;
    p.map = std::move(mask);
    p.num_classes = 2;
    return p;
  }

  static ConditionPayload make_semantic(Tensor map, int num_classes) {
    if (map.rank() != 2) throw ValueError("semantic map must be rank 2");
    if (num_classes < 2) throw ValueError("semantic map needs at least 2 classes");
    for (double v : map.data) {
      if (v != std::floor(v) || v < 0.0 || v >= static_cast<double>(num_classes))
        throw ValueError("semantic map entries must be integer class ids in [0, K)");
    }
    ConditionPayload p;
    p.kind = CondKind::semantic;
    p.map = std::move(map);
    p.num_classes = num_classes;
    return p;
  }

  static ConditionPayload make_none() { return ConditionPayload{}; }
};

struct ConditionTokens {
  Tensor tokens;  // [M, token_dim]
};

struct CondEncoderConfig {
  int label_vocab = 2;
  int num_classes = 2;
  int patch = 4;
  int token_dim = 16;

  void validate() const {
    if (label_vocab < 1) throw ValueError("cond encoder: label_vocab must be >= 1");
    if (num_classes < 2) throw ValueError("cond encoder: num_classes must be >= 2");
    if (patch < 1) throw ValueError("cond encoder: patch must be >= 1");
    if (token_dim < 4 || token_dim % 4 != 0)
      throw ValueError("cond encoder: token_dim must be a positive multiple of 4");
  }
};

struct CondEncoderParams {
  CondEncoderConfig cfg;
  Tensor label_table;  // [label_vocab, token_dim]
  Tensor class_table;  // [num_classes, token_dim]
  Tensor null_token;   // [1, token_dim]

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("cond.label_table", label_table);
    fn("cond.class_table", class_table);
    fn("cond.null_token", null_token);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn("cond.label_table", label_table);
    fn("cond.class_table", class_table);
    fn("cond.null_token", null_token);
  }
};

inline CondEncoderParams init_cond_encoder(RngState& rng, const CondEncoderConfig& cfg) {
  cfg.validate();
  CondEncoderParams p;
  p.cfg = cfg;
  std::size_t v = static_cast<std::size_t>(cfg.label_vocab);
  std::size_t k = static_cast<std::size_t>(cfg.num_classes);
  std::size_t d = static_cast<std::size_t>(cfg.token_dim);
  p.label_table = sample_standard_normal(rng, {v, d});
  p.class_table = sample_standard_normal(rng, {k, d});
  p.null_token = sample_standard_normal(rng, {1, d});
  return p;
}

// Per-patch class fractions. map is [H, W] with integer class ids; output is
// [gh * gw, num_classes] where gh = H / patch, gw = W / patch and every row
// sums to 1. Patch rows are laid out row-major over the patch grid.
inline Tensor patch_histograms(const Tensor& map, int patch, int num_classes) {
  if (map.rank() != 2) throw ValueError("patch_histograms: map must be rank 2");
  if (patch < 1) throw ValueError("patch_histograms: patch must be >= 1");
  std::size_t h = map.shape[0], w = map.shape[1];
  std::size_t p = static_cast<std::size_t>(patch);
  if (h % p != 0 || w % p != 0)
    throw ValueError("patch_histograms: map dimensions must be divisible by patch size");
  std::size_t gh = h / p, gw = w / p;
  std::size_t kk = static_cast<std::size_t>(num_classes);
  Tensor out = Tensor::zeros({gh * gw, kk});
  double inv = 1.0 / static_cast<double>(p * p);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double v = map.data[y * w + x];
      if (v != std::floor(v) || v < 0.0 || v >= static_cast<double>(num_classes))
        throw ValueError("patch_histograms: map entries must be class ids in [0, K)");
      std::size_t token = (y / p) * gw + (x / p);
      out.data[token * kk + static_cast<std::size_t>(v)] += inv;
    }
  }
  return out;
}

// Fixed 2-D sinusoidal code over a gh x gw grid, [gh * gw, dim]. Each
// quarter-group k holds sin/cos of the row and column index at wavelength
// 100^(k / (q-1)); grids here are small so wavelengths 1..100 suffice.
inline Tensor patch_position_code(int gh, int gw, int dim) {
  if (gh < 1 || gw < 1) throw ValueError("patch_position_code: grid must be positive");
  if (dim < 4 || dim % 4 != 0)
    throw ValueError("patch_position_code: dim must be a positive multiple of 4");
  std::size_t q = static_cast<std::size_t>(dim) / 4;
  std::vector<double> wav(q, 1.0);
  for (std::size_t k = 0; k < q; ++k)
    wav[k] = std::pow(100.0, q == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(q - 1));
  Tensor out = Tensor::zeros({static_cast<std::size_t>(gh) * static_cast<std::size_t>(gw),
                              static_cast<std::size_t>(dim)});
  std::size_t m = 0;
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x, ++m) {
      double* row = out.data.data() + m * static_cast<std::size_t>(dim);
      for (std::size_t k = 0; k < q; ++k) {
        row[4 * k + 0] = std::sin(static_cast<double>(y) / wav[k]);
        row[4 * k + 1] = std::cos(static_cast<double>(y) / wav[k]);
        row[4 * k + 2] = std::sin(static_cast<double>(x) / wav[k]);
        row[4 * k + 3] = std::cos(static_cast<double>(x) / wav[k]);
      }
    }
  }
  return out;
}

inline ConditionTokens encode_condition(const CondEncoderParams& params,
                                        const ConditionPayload& payload) {
  const CondEncoderConfig& cfg = params.cfg;
  std::size_t d = static_cast<std::size_t>(cfg.token_dim);
  ConditionTokens out;
  switch (payload.kind) {
    case CondKind::label: {
      if (payload.label < 0 || payload.label >= cfg.label_vocab)
        throw ValueError("encode_condition: label " + std::to_string(payload.label) +
                         " outside vocab of " + std::to_string(cfg.label_vocab));
      out.tokens = Tensor::zeros({1, d});
      const double* row =
          params.label_table.data.data() + static_cast<std::size_t>(payload.label) * d;
      for (std::size_t j = 0; j < d; ++j) out.tokens.data[j] = row[j];
      return out;
    }
    case CondKind::layout:
    case CondKind::semantic: {
      if (payload.num_classes > cfg.num_classes)
        throw ValueError("encode_condition: payload has more classes than the class table");
      Tensor hist = patch_histograms(payload.map, cfg.patch, cfg.num_classes);
      std::size_t m = hist.shape[0];
      std::size_t kk = hist.shape[1];
      int gh = static_cast<int>(payload.map.shape[0]) / cfg.patch;
      int gw = static_cast<int>(payload.map.shape[1]) / cfg.patch;
      Tensor pos = patch_position_code(gh, gw, cfg.token_dim);
      out.tokens = Tensor::zeros({m, d});
      for (std::size_t i = 0; i < m; ++i) {
        double* dst = out.tokens.data.data() + i * d;
        const double* hrow = hist.data.data() + i * kk;
        for (std::size_t c = 0; c < kk; ++c) {
          double f = hrow[c];
          if (f == 0.0) continue;
          const double* crow = params.class_table.data.data() + c * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += f * crow[j];
        }
        const double* prow = pos.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += prow[j];
      }
      return out;
    }
    case CondKind::none: {
      out.tokens = params.null_token;
      return out;
    }
  }
  throw ValueError("encode_condition: unknown payload kind");
}

}  // namespace bridgegen
