// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <cstdint>

namespace pie::random {

/// What a stream of draws is used for; part of the stream key.
enum class Role : std::uint64_t {
  FactorEffect = 1,
  RegressorNoise1 = 2,
  RegressorNoise2 = 3,
  InitialError = 4,
  Innovation = 5,
  Adoption = 6,
  StartLoadings = 7,
  Generic = 8,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based stream: draw j of key (seed, replication, unit, role) is a
/// pure function of those five integers, so results do not depend on the
/// order in which replications or units are generated.
class KeyedStream {
 public:
  KeyedStream(std::uint64_t seed, std::uint64_t replication, std::uint64_t unit, Role role) noexcept {
    std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
    h = splitmix64(h ^ replication);
    h = splitmix64(h ^ unit);
    key_ = splitmix64(h ^ static_cast<std::uint64_t>(role));
  }

  [[nodiscard]] std::uint64_t bits(std::uint64_t counter) const noexcept {
    return splitmix64(key_ ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
  }

  /// Uniform on the open interval (0, 1).
  [[nodiscard]] double uniform(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by inverse CDF.
  [[nodiscard]] double normal(std::uint64_t counter) const {
    return -M_SQRT2 * boost::math::erfc_inv(2.0 * uniform(counter));
  }

 private:
  std::uint64_t key_ = 0;
};

}  // namespace pie::random
