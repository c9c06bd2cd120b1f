#pragma once

#include <stdexcept>
#include <string>

namespace mlstm {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or argument contract violated by the caller.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent input data (CSV content, cohort contents).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed model or sidecar file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlstm
