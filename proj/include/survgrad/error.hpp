#pragma once

#include <stdexcept>
#include <string>

namespace survgrad {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation requested on an object that is not in a usable state
// (e.g. predicting with an unfitted model).
class StateError : public Error {
 public:
  using Error::Error;
};

// Training could not proceed: no events, non-finite loss, ...
class TrainingError : public Error {
 public:
  using Error::Error;
};

class SimulationError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given inputs.
class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace survgrad
