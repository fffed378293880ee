#pragma once

#include <stdexcept>
#include <string>

namespace storm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or sequence dimensions disagree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid (divisibility, non-square pool factor...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input reached an operation that requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operation called in a direction mode that does not support it.
class ModeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace storm
