#pragma once

#include <stdexcept>
#include <string>

namespace crtsim {

// Bad input: malformed files, violated preconditions, infeasible requests.
// The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure while computing on valid input (calibration, singular design,
// empty pool). The CLI maps these to exit code 2.
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CapacityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class GenerationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EmptyPoolError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class CalibrationError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class SingularDesignError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

}  // namespace crtsim
