#pragma once

#include <stdexcept>
#include <string>

namespace lcseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data: bad magic, truncation, unparsable manifest line.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An iterative numeric routine failed (e.g. the eigensolver).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lcseg
