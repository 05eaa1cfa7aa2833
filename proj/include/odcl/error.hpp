#pragma once

#include <stdexcept>
#include <string>

namespace odcl {

// A rejected configuration value, addressed by its dotted key.
struct ConfigIssue {
  std::string key;
  std::string message;

  bool operator==(const ConfigIssue&) const = default;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stream index outside [0, K).
class StreamExhausted : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical input rejected (non-finite gradient, importance, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace odcl
