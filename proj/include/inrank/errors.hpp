#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace inrank {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A parameter is outside its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A computation produced or received non-finite values, or diverged.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, long layer = -1)
      : Error(what), layer_(layer) {}

  /// Index of the offending layer, or -1 when not layer-specific.
  long layer() const noexcept { return layer_; }

 private:
  long layer_;
};

/// An API was called out of order or with stale state.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text (CSV rows, config values).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input parsed but violates its schema (e.g. label out of range).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration; the message names the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace inrank
