#include "qkdblind/rng.hpp"

namespace qkdblind {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, Stream stream,
                       std::uint64_t index) noexcept
    : key_(splitmix64(splitmix64(seed) ^
                      splitmix64(static_cast<std::uint64_t>(stream) << 56 ^
                                 splitmix64(index)))) {}

std::uint64_t CounterRng::next() noexcept {
  // Two rounds keep consecutive counters decorrelated under a shared key.
  return splitmix64(splitmix64(key_ + 0x632be59bd9b4e019ULL * ++counter_));
}

double CounterRng::uniform() noexcept {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

}  // namespace qkdblind
