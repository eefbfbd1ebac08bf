#pragma once

#include <stdexcept>
#include <string>

namespace sgf {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed inputs: wrong dimensions, invalid configuration values.
struct DimensionError : Error {
  using Error::Error;
};

/// A declared model contract failed (derivative check, steady-state
/// residual, Hurwitz requirement, ...).
struct ContractError : Error {
  using Error::Error;
};

struct QpInfeasible : Error {
  using Error::Error;
};

struct QpMaxIterations : Error {
  using Error::Error;
};

struct QpIllConditioned : Error {
  using Error::Error;
};

/// Numerical breakdown during integration or analysis (NaN/Inf, no
/// convergence of an iterative estimator).
struct NumericalError : Error {
  using Error::Error;
};

struct SimulationError : NumericalError {
  SimulationError(const std::string& what, double t)
      : NumericalError(what + " (t=" + std::to_string(t) + ")"), time(t) {}
  double time;
};

/// Scenario file problems: parse failures, unresolved catalog names.
struct ScenarioError : Error {
  using Error::Error;
};

}  // namespace sgf
