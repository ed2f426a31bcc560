#pragma once

#include <stdexcept>
#include <string>

namespace transfusion {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents, bad axis, count mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (dead tape, non-scalar loss, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// On-disk format problems. Subclasses let callers tell corruption kinds apart.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class LabelMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace transfusion
