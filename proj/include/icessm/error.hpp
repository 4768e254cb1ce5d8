#pragma once

#include <stdexcept>
#include <string>

namespace icessm {

/// Malformed arguments or incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad on-disk data: magic mismatch, truncation, impossible dimensions.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data that violates an operation's precondition (e.g. a gap at a series boundary).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf escaped a computation, or training diverged.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace icessm
