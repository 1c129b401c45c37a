#pragma once

#include <stdexcept>
#include <string>

namespace fsfd {

// Root of the library's exception hierarchy. Catching this catches
// everything fsfd throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad arguments, shapes, or configuration: the caller can fix the input.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Index or window outside the available sample range.
class RangeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A dimension is too small or a sequence too short.
class SizeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Matrix dimensions are mutually inconsistent.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A scalar parameter is outside its admissible set.
class ParameterError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// The state-space model violates a structural requirement
// (not minimal, not observable, wrong block sizes, ...).
class ModelError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Input data violates a requirement (too few columns, missing labels, ...).
class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A matrix that must have orthonormal columns or rows does not.
class BasisError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// An operation was asked of an object in the wrong mode.
class ModeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical trouble: the computation itself could not be completed reliably.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// An iteration failed to reach its tolerance within the budget.
class ConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A matrix that must be invertible or definite is numerically singular.
class ConditioningError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A synthesized quantity (gain, basis) failed its own certificate.
class SynthesisError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Data carries too little excitation or variability for the requested object.
class DegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A mathematical identity or rank law that the library promises to certify
// failed on the given instance.
class CertificateError : public Error {
 public:
  using Error::Error;
};

}  // namespace fsfd
