#pragma once

#include <stdexcept>
#include <string>

namespace cbrisk {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad file / config / spec-string contents. CLI exit code 2.
struct ParseError : Error {
  using Error::Error;
};

// Mismatched vector/matrix sizes or missing design context. CLI exit code 3.
struct DimensionError : Error {
  using Error::Error;
};

// Solver did not converge / factorization failed. CLI exit code 4.
struct SolverError : Error {
  explicit SolverError(const std::string& msg, long iterations = -1)
      : Error(msg), iterations(iterations) {}
  long iterations;
};

}  // namespace cbrisk
