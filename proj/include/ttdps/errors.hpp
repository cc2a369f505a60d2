#pragma once

#include <stdexcept>
#include <string>

namespace ttdps {

/// Root of the library's exception hierarchy. Every error thrown by ttdps
/// derives from this type so callers (and the CLI) can classify failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or shape violation in the caller's arguments.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A solver failed to converge or produced non-finite values.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Normal derivative of the travel time vanishes at a receiver, so the
/// adjoint boundary condition cannot be imposed.
class DegenerateBoundary : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// No admissible set of subspace transition times exists.
class ScheduleInfeasible : public Error {
 public:
  using Error::Error;
};

/// Random phantom generation exhausted its retry budget.
class GenerationFailure : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace ttdps
