#pragma once

#include <stdexcept>
#include <string>

namespace mkb {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument lies outside an operation's domain (log of a
/// non-positive value, empty softmax, out-of-range index).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; the message names the offending line.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Logical-form token stream that cannot be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Failure while computing a denotation (unknown symbol, type error,
/// empty argmax domain).
class ExecutionError : public Error {
 public:
  using Error::Error;
};

}  // namespace mkb
