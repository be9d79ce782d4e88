#pragma once

#include <stdexcept>
#include <string>

namespace divmix {

// Bad input: malformed files, violated preconditions, inconsistent configs.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed manifest or config text; the message carries the line number.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures that happen while doing valid work: I/O, decode, divergence.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace divmix
