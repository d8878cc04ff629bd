#pragma once

#include <stdexcept>
#include <string>

namespace sceneadapt {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// ConfigError -> 1, IoError -> 2, DataError/CheckpointError -> 3.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : DataError {
  using DataError::DataError;
};

// Misuse of an API (wrong tape, double backward, missing gradient, ...).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite value or out-of-domain argument caught by runtime checks.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A structural invariant was breached, e.g. a training path touched target labels.
struct InvariantError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace sceneadapt
