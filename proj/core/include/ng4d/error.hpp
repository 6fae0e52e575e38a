#pragma once

#include <stdexcept>
#include <string>

namespace ng4d {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not agree for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (counts, ratios, option combinations).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable input data (files, sequences).
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN or Inf produced somewhere in a computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ng4d
