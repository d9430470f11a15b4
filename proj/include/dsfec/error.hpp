#pragma once

#include <stdexcept>
#include <string>

namespace dsfec {

/// Base for every error raised by the library. Each subclass maps onto one
/// CLI exit code (see tools/dsfec.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape, channel or hyper-parameter mismatch; invalid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Weight file unreadable, corrupt, or missing tensors.
class WeightError : public Error {
 public:
  using Error::Error;
};

/// Malformed radar frame input. Carries the 1-based line number when known.
class InputError : public Error {
 public:
  InputError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Ground-truth / detection files that cannot be evaluated together.
class EvalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (unwritable directory, short write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsfec
