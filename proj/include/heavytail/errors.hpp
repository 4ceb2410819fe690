#pragma once

#include <stdexcept>

namespace heavytail {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Zero-norm vectors and other inputs with no defined result.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Out-of-range class or element index.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Rejected operation parameters (counts, factors, epoch bounds).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; the message carries the offending line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Bad key=value configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace heavytail
