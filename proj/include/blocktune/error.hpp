#pragma once

#include <stdexcept>
#include <string>

namespace blocktune {

// Error hierarchy. The CLI maps each family onto an exit code:
// ParseError/ValidationError -> 1, InfeasibleError -> 2, InternalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

// Raised when a surrogate is queried before it has been fitted.
class PredictorNotReady : public Error {
 public:
  PredictorNotReady() : Error("performance predictor is not fitted") {}
};

// An assignment violates the per-block count or byte caps.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

}  // namespace blocktune
