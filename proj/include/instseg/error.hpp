#pragma once

#include <stdexcept>
#include <string>

namespace instseg {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: bad files, shape mismatches, invalid
/// parameters. The CLI maps these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Failure while computing on valid input. The CLI maps these to exit code 1.
class ComputeError : public Error {
 public:
  using Error::Error;
};

}  // namespace instseg
