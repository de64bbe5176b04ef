#pragma once

#include <stdexcept>
#include <string>

namespace qkdblind {

/// A caller supplied a value outside an operation's domain.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative or linear-algebra routine failed to produce an answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed scenario, parameter or data file. `what()` carries the field path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough counts to form an estimate.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qkdblind
