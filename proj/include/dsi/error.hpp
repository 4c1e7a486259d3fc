#pragma once

#include <stdexcept>
#include <string>

namespace dsi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data does not match the schema it is used with (sizes, indices, names).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or out-of-range input parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown: singular systems, non-finite values, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A required input artifact is missing on disk.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsi
