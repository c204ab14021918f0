#pragma once

#include <stdexcept>
#include <string>

namespace geca {

/// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (odd n_gamma, p outside [0,1], unknown key...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Caller-supplied data is invalid (timestep out of range, unknown label...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Sampler called out of order (prev grid at t=T, or missing at t<T).
struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Non-finite loss or gradient during optimisation.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplingError : std::runtime_error {
  SamplingError(const std::string& what, int timestep)
      : std::runtime_error(what + " (t=" + std::to_string(timestep) + ")"), t(timestep) {}
  int t;
};

/// Unreadable or inconsistent checkpoint / image file.
struct CorruptArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace geca
