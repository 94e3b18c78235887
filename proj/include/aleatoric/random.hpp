#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "aleatoric/tensor.hpp"

namespace aleatoric {

/// splitmix64 finalizer; used both for seeding and for sub-stream derivation.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// xoshiro256** seeded through splitmix64.
///
/// Uniforms take the top 53 bits of a draw. Normals use the Marsaglia polar
/// method, which only needs log and sqrt, and cache the second variate of each
/// accepted pair. The cached variate is part of the stream state.
class RngStream {
 public:
  struct State {
    std::array<std::uint64_t, 4> words{};
    bool has_spare = false;
    double spare = 0.0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit RngStream(std::uint64_t seed = 0);
  explicit RngStream(const State& state) : state_(state) {}

  /// Independent stream for a named purpose, e.g. derive(root, "dropout", member).
  template <typename... Index>
  static RngStream derive(std::uint64_t root, std::string_view purpose, Index... index) {
    std::uint64_t h = splitmix64(root ^ fnv1a(purpose));
    ((h = splitmix64(h ^ static_cast<std::uint64_t>(index))), ...);
    return RngStream(h);
  }

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double normal();

  const State& state() const { return state_; }

 private:
  State state_;
};

/// Tensor of i.i.d. N(0, 1) draws in row-major order.
Tensor sample_standard_normal(RngStream& rng, const Shape& shape);

}  // namespace aleatoric
