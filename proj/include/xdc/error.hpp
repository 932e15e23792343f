#pragma once

#include <stdexcept>
#include <string>

namespace xdc {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid dimensions, invalid knobs, inconsistent model wiring.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: non-finite values, out-of-range labels, misaligned arrays.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (dataset, checkpoint, config).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient encountered during training.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace xdc
