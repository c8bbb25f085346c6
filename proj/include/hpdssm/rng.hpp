#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "hpdssm/tensor.hpp"

namespace hpdssm {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a; stable across platforms, used to turn labels into lanes.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Combines a master seed with a trial index into a stream key.
constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t trial) noexcept {
  return mix64(seed ^ mix64(trial + kGoldenGamma));
}

/// Counter-based random stream: the value at (key, lane, counter) is a pure
/// function of the triple, so draws never depend on evaluation order.
struct RngStream {
  std::uint64_t key = 0;
  std::uint64_t lane = 0;
  std::uint64_t counter = 0;

  static RngStream labelled(std::uint64_t key, std::string_view label) {
    return {key, hash_label(label), 0};
  }

  /// Raw 64 bits at absolute position `index`. The (key, lane) pair selects a
  /// SplitMix64 sequence and `index` is the position within it.
  constexpr std::uint64_t bits_at(std::uint64_t index) const noexcept {
    const std::uint64_t stream_seed = mix64(mix64(key + kGoldenGamma) ^ lane);
    return mix64(stream_seed + (index + 1) * kGoldenGamma);
  }

  /// Uniform in (0, 1].
  double open_uniform_at(std::uint64_t index) const noexcept {
    return (static_cast<double>(bits_at(index) >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Uniform in [0, 1).
  double uniform_at(std::uint64_t index) const noexcept {
    return static_cast<double>(bits_at(index) >> 11) * 0x1.0p-53;
  }

  /// Standard normal number `i` of this stream (relative to `counter`),
  /// built by Box-Muller from uniforms at positions 2i and 2i+1.
  double normal_at(std::uint64_t i) const noexcept {
    const std::uint64_t base = counter + 2 * i;
    const double u1 = open_uniform_at(base);
    const double u2 = uniform_at(base + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
};

/// `count` i.i.d. standard normals starting at the stream's counter.
inline Tensor normal_draw(const RngStream& stream, std::size_t count) {
  Tensor out({count});
  for (std::size_t i = 0; i < count; ++i) out[i] = stream.normal_at(i);
  return out;
}

}  // namespace hpdssm
