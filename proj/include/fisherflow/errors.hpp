#pragma once

#include <stdexcept>
#include <string>

namespace fisherflow {

/// Invalid user input: bad domain spec, out-of-range parameter, mismatched mesh.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Triangulation could not be built or failed its post-conditions.
class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear solver, Sinkhorn or JKO inner loop failed to converge, or a
/// numeric invariant (positivity, finiteness) was violated.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace fisherflow
