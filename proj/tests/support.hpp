#pragma once

#include <cmath>
#include <cstdint>

namespace qkdblind::test {

/// |k/n - p| within `sigmas` binomial standard deviations.
inline bool binomially_close(std::uint64_t k, std::uint64_t n, double p, double sigmas = 3.0) {
  const double nn = static_cast<double>(n);
  const double sd = std::sqrt(p * (1.0 - p) / nn);
  return std::abs(static_cast<double>(k) / nn - p) <= sigmas * sd;
}

inline bool rel_close(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::abs(b);
}

}  // namespace qkdblind::test
