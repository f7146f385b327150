#pragma once

#include <stdexcept>
#include <string>

namespace spm {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside a solver (Newton breakdown, Picard divergence, ...).
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace spm
