#pragma once

#include <stdexcept>
#include <string>

namespace grmcat {

// Precondition violations use std::invalid_argument directly. The types below
// cover failures that callers are expected to tell apart.

/// Posterior collapsed to zero on every grid point: the response pattern is
/// impossible at the grid's resolution.
class NumericalDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No unadministered item is left to select.
class ExhaustedBank : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A durable document (bank, config, session log) failed to parse or validate.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace grmcat
