#pragma once

#include <stdexcept>
#include <string>

namespace markov_opt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: NaN/Inf inputs, dimension mismatches, bad shapes.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A point lies outside the domain of a mirror map (e.g. entropy at the boundary).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or solver configuration, detected before any work is done.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure did not converge within its iteration limit.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Chain diagnostics failed (power iteration or mixing time did not converge).
class DiagnosticsError : public Error {
 public:
  using Error::Error;
};

/// The kernel is not irreducible and aperiodic.
class ErgodicityError : public DiagnosticsError {
 public:
  using DiagnosticsError::DiagnosticsError;
};

/// A statistical procedure cannot produce a meaningful answer (too few trials, degenerate grid).
class StatisticsError : public Error {
 public:
  using Error::Error;
};

/// Err_VI requested for an operator it cannot be evaluated exactly on.
class UnsupportedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace markov_opt
