#pragma once

// Counter-keyed random streams.
//
// Every random draw in a simulation is taken from a short-lived stream whose
// seed is a hash of (seed, replication, iteration, purpose, node). This keeps a
// replication's trajectory independent of how many other replications run, of
// the worker that executes it, and of which other draws a variant consumes.

#include <cstdint>
#include <limits>

namespace dosp {

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// SplitMix64 engine; satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
  using result_type = std::uint64_t;

  constexpr explicit SplitMix64(std::uint64_t state = 0) noexcept : state_(state) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  constexpr double uniform01() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Fair coin.
  constexpr bool coin() noexcept { return ((*this)() >> 63) != 0; }

private:
  std::uint64_t state_;
};

enum class Purpose : std::uint32_t {
  initial_action = 1,
  perturbation = 2,
  environment = 3,
  observation_noise = 4,
  exchange = 5,
  auxiliary = 6,
};

/// Stream source for one replication of one experiment.
class StreamSource {
public:
  constexpr StreamSource(std::uint64_t seed, std::uint64_t replication) noexcept
      : base_(mix64(mix64(seed ^ 0x5eedULL) ^ (replication * 0xd1342543de82ef95ULL))) {}

  constexpr SplitMix64 stream(std::int64_t iteration, Purpose purpose,
                              std::uint64_t node = 0) const noexcept {
    std::uint64_t h = mix64(base_ ^ static_cast<std::uint64_t>(iteration));
    h = mix64(h ^ (static_cast<std::uint64_t>(purpose) << 32) ^ node);
    return SplitMix64(h);
  }

private:
  std::uint64_t base_;
};

} // namespace dosp
