#pragma once

#include <cstdint>

namespace qkdblind {

/// Independent random streams derived from one scenario seed.
enum class Stream : std::uint64_t {
  gate_plan = 1,
  slot = 2,
  sweep = 3,
  test = 4,
};

/// Counter-based generator: the n-th draw of (seed, stream, index) is a pure
/// function of those four numbers, so any slot can be regenerated without
/// replaying the slots before it.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t index) noexcept;

  std::uint64_t next() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  int bit() noexcept { return static_cast<int>(next() >> 63); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace qkdblind
