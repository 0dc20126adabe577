#pragma once

#include <stdexcept>
#include <string>

namespace forgetlab {

/// Bad arguments: dimension mismatch, out-of-range probabilities, violated preconditions.
struct input_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or failed numerical procedures.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Two routes to the same quantity disagree, or a bracket derived from theory does not bracket.
struct consistency_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested estimator cannot handle the integrand (e.g. quadrature on a non-projectable function).
struct method_error : std::logic_error {
  using std::logic_error::logic_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw input_error(what);
}

}  // namespace forgetlab
