#pragma once

#include <stdexcept>
#include <string>

namespace kerrcool {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An input lies outside the domain of the operation (bad parameter, empty grid, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

/// A numerical procedure failed (non-convergence, singular system, quadrature trouble).
class NumericalError : public Error {
public:
  using Error::Error;
};

/// The linearized mechanics is unstable (negative effective damping or a growing mode).
class InstabilityError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Linear cavity (K_eff = 0): no bistability threshold exists.
class NoBistabilityError : public DomainError {
public:
  using DomainError::DomainError;
};

/// A fit ran but its result failed an acceptance criterion.
class FitRejected : public NumericalError {
public:
  using NumericalError::NumericalError;
};

} // namespace kerrcool
