#pragma once

#include <stdexcept>
#include <string>

namespace newsdistill {

// Base of every error the library throws. The C API maps each subclass to a
// status code (see newsdistill.h).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition (non-scalar loss, missing gradient...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, unknown key, or a call in the wrong training mode.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed model input: out-of-vocabulary id, fully masked sequence.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing data files and checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, or a gradient audit failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace newsdistill
