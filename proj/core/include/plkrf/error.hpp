#pragma once

#include <stdexcept>
#include <string>

namespace plkrf {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between tensor operands.
struct DimensionError : Error {
  using Error::Error;
};

// An API precondition was violated (counts, value ranges, call order).
struct ContractError : Error {
  using Error::Error;
};

// Invalid camera, patch grid, or line construction.
struct GeometryError : Error {
  using Error::Error;
};

// Bad or missing input data (dataset layout, malformed files).
struct DataError : Error {
  using Error::Error;
};

// Non-finite values or failed numeric checks.
struct NumericError : Error {
  using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem failures; message carries the offending path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace plkrf
