#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vmrn {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition or invariant. Maps to exit code 1.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes are incompatible; the message names both shapes.
class ShapeError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// A file could not be parsed; the message carries the file context.
class ParseError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// Filesystem or I/O failure. Maps to exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training aborted (e.g. a loss term became non-finite).
class TrainingError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace vmrn
