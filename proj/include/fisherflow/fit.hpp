#pragma once

#include <span>
#include <vector>

#include "json.hpp"

namespace fisherflow {

/// Least-squares fit r(t) ~ alpha sqrt(t) + beta t.
struct FitResult {
  double alpha = 0.0;
  double beta = 0.0;
  double residual = 0.0;  // root mean square of r - fit
  double t_min = 0.0, t_max = 0.0;

  double operator()(double t) const;
  nlohmann::json to_json() const;
};

/// Needs at least two samples with distinct t > 0.
FitResult fit_sqrt_linear(std::span<const double> t, std::span<const double> r);

/// n geometrically spaced points from t_min to t_max inclusive.
std::vector<double> geometric_times(double t_min, double t_max, int n);

}  // namespace fisherflow
