#pragma once

#include <stdexcept>
#include <string>

namespace hsimamba {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, shape mismatches, malformed configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a computation, or a diverged training run.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class IoErrorKind {
  open_failed,
  bad_magic,
  bad_version,
  truncated_payload,
  extent_overflow,
  bad_trailer,
  write_failed,
};

class IoError : public Error {
 public:
  IoError(IoErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  IoErrorKind kind() const noexcept { return kind_; }

 private:
  IoErrorKind kind_;
};

}  // namespace hsimamba
