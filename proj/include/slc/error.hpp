#pragma once

#include <stdexcept>
#include <string>

namespace slc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or kernel geometry that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (alpha out of range, bad stride, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File decoding and encoding failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace slc
