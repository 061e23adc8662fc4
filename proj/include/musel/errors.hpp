#pragma once

#include <stdexcept>
#include <string>

namespace musel {

/// Invalid configuration (bad constants, degenerate geometry, malformed files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Physics or sampling failed to terminate within its caps.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite objective, failed factorization, or similar numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace musel
