#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sjm {

// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input text (CSV syntax, bad numbers). Carries a 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Structurally valid input that violates a dataset invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A reference (e.g. a visit's subject id) that does not resolve.
class ReferentialError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or out-of-range configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Survival fit requested on data without any observed events.
class NoEventsError : public Error {
 public:
  using Error::Error;
};

// The model cannot be identified from the data (singular information,
// separation, degenerate design).
class NotIdentifiableError : public Error {
 public:
  using Error::Error;
};

// Iterative fit did not converge; carries the last iterate for diagnostics.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> last_iterate)
      : Error(what), last_iterate_(std::move(last_iterate)) {}
  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

 private:
  std::vector<double> last_iterate_;
};

// Too many resampling replicates failed to produce an estimate.
class ResamplingError : public Error {
 public:
  using Error::Error;
};

// Too many Monte-Carlo replicates failed within a simulation study.
class StudyError : public Error {
 public:
  using Error::Error;
};

}  // namespace sjm
