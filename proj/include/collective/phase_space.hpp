#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace collective {

/// A point (q, p, tau) in extended phase space.
struct PhaseState {
    double q = 0.0;
    double p = 0.0;
    double tau = 0.0;

    bool finite() const { return std::isfinite(q) && std::isfinite(p) && std::isfinite(tau); }
    friend bool operator==(const PhaseState&, const PhaseState&) = default;
};

/// Base for every error raised by the library. The CLI maps the subclasses
/// onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Violated precondition or malformed input.
class ConfigError : public Error {
public:
    using Error::Error;
};

class UnsupportedSchemeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Numerical blow-up; carries the last state that was still finite and bounded.
class DivergedError : public Error {
public:
    DivergedError(const std::string& what, PhaseState last) : Error(what), last_valid(last) {}
    PhaseState last_valid;
};

/// A structure the request depends on does not exist (no x-point, no closed orbit).
class StructuralAbsenceError : public Error {
public:
    using Error::Error;
};

class NoClosedOrbitError : public StructuralAbsenceError {
public:
    using StructuralAbsenceError::StructuralAbsenceError;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// Iterative solver stopped at max_iter.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual) : Error(what), last_residual(residual) {}
    double last_residual;
};

}  // namespace collective
