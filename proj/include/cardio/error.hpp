#pragma once

#include <stdexcept>
#include <string>

namespace cardio {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes passed to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file contents (datasets, checkpoints, configs).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cardio
