#pragma once

#include <stdexcept>
#include <string>

namespace defmark {

// Base for all library failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed files, invalid parameters, violated preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

// Degenerate geometry or non-finite values reached during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace defmark
