#pragma once

#include <stdexcept>
#include <string>

namespace xinc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Kernel size the convolution routines do not handle (even sizes).
class UnsupportedKernelError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradients during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Persisted data failed a consistency check (hash, size, version).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace xinc
