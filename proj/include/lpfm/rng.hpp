#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lpfm {

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-based generator: draw n is a pure function of (seed, n), so streams
/// can be split and consumed in any order without changing results.
/// std::*_distribution is avoided because its output is implementation defined.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  constexpr RngState() = default;
  constexpr explicit RngState(std::uint64_t s, std::uint64_t c = 0) : seed(s), counter(c) {}

  /// Independent child stream.
  constexpr RngState split(std::uint64_t stream) const noexcept {
    return RngState(detail::splitmix64(seed ^ detail::splitmix64(stream ^ 0xA0761D6478BD642FULL)), 0);
  }

  constexpr std::uint64_t next_u64() noexcept {
    return detail::splitmix64(seed + detail::splitmix64(counter++));
  }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = n == 0 ? 0 : (~std::uint64_t(0) - (~std::uint64_t(0) % n));
    std::uint64_t x;
    do {
      x = next_u64();
    } while (limit != 0 && x >= limit);
    return n == 0 ? 0 : x % n;
  }

  /// Standard normal via Box-Muller (one value per pair of uniforms).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  friend constexpr bool operator==(const RngState&, const RngState&) = default;
};

}  // namespace lpfm
