#pragma once

#include <stdexcept>
#include <string>

namespace capsfield {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or otherwise unreadable file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, recipe or argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Artifacts that are individually valid but do not fit together
/// (checkpoint vs dataset vocabulary, protocol vs manifest tags).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace capsfield
