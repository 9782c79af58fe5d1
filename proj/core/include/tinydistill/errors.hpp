#pragma once

#include <stdexcept>
#include <string>

namespace tinydistill {

// Error taxonomy. Every precondition violation maps onto one of these so
// callers (and the CLI) can distinguish "you passed garbage" from "the file
// is corrupt" from "you used the API out of order".

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/operand dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// A value is outside its legal range (token id, probability, axis, ...).
struct DomainError : Error {
  using Error::Error;
};

// API called out of order or on the wrong object (double backward, ...).
struct UsageError : Error {
  using Error::Error;
};

// A run configuration is internally inconsistent.
struct ConfigError : Error {
  using Error::Error;
};

// A sequence is too long/short for the requested operation.
struct LengthError : Error {
  using Error::Error;
};

// File or stream level failure (missing file, bad magic, truncation).
struct IoError : Error {
  using Error::Error;
};

}  // namespace tinydistill
