#pragma once

#include <stdexcept>
#include <string>

namespace recal {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
struct ShapeError : Error {
  using Error::Error;
};

// Numeric domain violations (log of non-positive, division by zero,
// non-finite results).
struct DomainError : Error {
  using Error::Error;
};

// Caller broke a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// Object used in a state that does not permit the operation.
struct StateError : Error {
  using Error::Error;
};

// Invalid run configuration (bad flag value, unknown key, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed file content.
struct FormatError : Error {
  using Error::Error;
};

// Runtime numeric failure during training (NaN loss and friends).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace recal
