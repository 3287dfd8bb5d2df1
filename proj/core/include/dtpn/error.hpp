#pragma once

#include <stdexcept>
#include <string>

namespace dtpn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document (JSON syntax, binary framing).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor or feature shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (feature header vs. model, bad key, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient; carries the offending batch when known.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long batch = -1) : Error(what), batch_(batch) {}
  long batch() const noexcept { return batch_; }

 private:
  long batch_;
};

}  // namespace dtpn
