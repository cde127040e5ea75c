#pragma once

#include <stdexcept>
#include <string>

namespace isnet {

// Base of every error the library throws. The CLI maps the category to an
// exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// API misuse: wrong argument values, calling an operation out of order.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad or missing data (labels out of range, missing dataset directory).
class DataError : public Error {
 public:
  using Error::Error;
};

// Configuration file problems and checkpoint/data mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric with no defined value, e.g. mIoU when no class is present.
class MetricError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace isnet
