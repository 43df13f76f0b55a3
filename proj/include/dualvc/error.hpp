// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dualvc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied value is outside its allowed range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A configuration object violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A precondition on how an operation is used was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Binary file is malformed: bad magic, version or length.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The requested operation is not available in the given inference mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

/// Sequence too short for the requested prediction horizon.
class InsufficientContextError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf surfaced at an operation boundary.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace dualvc
