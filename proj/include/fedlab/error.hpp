#pragma once

#include <stdexcept>
#include <string>

namespace fedlab {

// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree or violate an operation's shape precondition.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An iterative routine failed to converge or produced non-finite values.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double residual = 0.0)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// The requested norm/oracle combination is not implemented.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// The oracle is undefined for the input (e.g. effective p of an all-zero spectrum).
class UndefinedOracleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violation of the client/server message contract (duplicate ids, unknown client).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedlab
