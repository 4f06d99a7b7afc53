#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace certmpc {

/// Base class of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dimension mismatch or malformed input data.
struct InputError : Error {
  using Error::Error;
};

/// Out-of-range scalar parameter.
struct ParameterError : Error {
  using Error::Error;
};

/// Non-finite value produced during an iteration.
struct NumericError : Error {
  std::uint64_t iteration = 0;
  NumericError(const std::string& what, std::uint64_t iter)
      : Error(what + " (iteration " + std::to_string(iter) + ")"), iteration(iter) {}
  explicit NumericError(const std::string& what) : Error(what) {}
};

/// A mathematical invariant of a type does not hold.
struct InvariantError : Error {
  using Error::Error;
};

/// The MPC design cannot be built (rank deficiency, non-PD blocks, ...).
struct DesignError : Error {
  using Error::Error;
};

/// No admissible eps0 interval at q_min; carries the closest approach of
/// the decrease residual to its threshold (positive means infeasible).
struct CertificationInfeasible : Error {
  double margin;
  CertificationInfeasible(const std::string& what, double closest_margin)
      : Error(what), margin(closest_margin) {}
};

/// Feasible set of a QP is empty.
struct InfeasibleProblem : Error {
  using Error::Error;
};

/// An iterative reference computation did not converge.
struct ConvergenceError : Error {
  using Error::Error;
};

/// Closed-loop precondition failed.
struct PreconditionError : Error {
  using Error::Error;
};

}  // namespace certmpc
