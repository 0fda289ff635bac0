#pragma once

// Counter-based splittable RNG. The generator is a pure function of
// (seed, stream), so state is two u64 words and streams can be split
// without touching global state. Mixing is the splitmix64 finalizer.

#include <cmath>
#include <cstdint>
#include <utility>

#include "bridgegen/tensor.hpp"

namespace bridgegen {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace detail

inline std::uint64_t next_u64(RngState& rng) {
  std::uint64_t v = detail::mix64(rng.seed + rng.stream * detail::kGolden);
  rng.stream += 1;
  return v;
}

// Strictly inside (0, 1); safe as a log() argument.
inline double next_uniform(RngState& rng) {
  return (static_cast<double>(next_u64(rng) >> 11) + 0.5) * 0x1.0p-53;
}

// Box-Muller, cosine branch only: always consumes exactly two draws and
// keeps no cached second sample, so the stream offset stays predictable.
inline double next_normal(RngState& rng) {
  double u1 = next_uniform(rng);
  double u2 = next_uniform(rng);
  double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline Tensor sample_standard_normal(RngState& rng, const Shape& shape) {
  Tensor out = Tensor::zeros(shape);
  for (double& v : out.data) v = next_normal(rng);
  return out;
}

// Derives two child generators and advances the parent by the two draws
// consumed. Child seeds are re-mixed with distinct tweaks so their output
// streams do not collide with raw parent output.
inline std::pair<RngState, RngState> split_rng(RngState& rng) {
  std::uint64_t a = next_u64(rng);
  std::uint64_t b = next_u64(rng);
  RngState left{detail::mix64(a ^ 0xA5A5A5A5A5A5A5A5ull), 0};
  RngState right{detail::mix64(b ^ 0x5A5A5A5A5A5A5A5Aull), 0};
  return {left, right};
}

}  // namespace bridgegen
