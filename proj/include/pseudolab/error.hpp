#pragma once

#include <stdexcept>
#include <string>

namespace pseudolab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A layer or run configuration that cannot be realized.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data violating an operation's precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by a kernel or supplied as a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// An existing layer used where a different kind of layer is required.
class LayerTypeError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized input (dataset bytes, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pseudolab
