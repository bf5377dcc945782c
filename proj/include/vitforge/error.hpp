#pragma once

#include <stdexcept>
#include <string>

namespace vitforge {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain (labels, fold counts, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// API called in the wrong state, e.g. backward on a tape that never recorded.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Optimizer gradients do not line up with the trainable parameter set.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Image bytes could not be decoded.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Dataset layout problems found while indexing a root directory.
class IngestionError : public Error {
 public:
  using Error::Error;
};

}  // namespace vitforge
