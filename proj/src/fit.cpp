#include "fisherflow/fit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "fisherflow/errors.hpp"

namespace fisherflow {

double FitResult::operator()(double t) const { return alpha * std::sqrt(t) + beta * t; }

nlohmann::json FitResult::to_json() const {
  return {{"alpha", alpha}, {"beta", beta}, {"residual", residual}, {"window", {t_min, t_max}}};
}

FitResult fit_sqrt_linear(std::span<const double> t, std::span<const double> r) {
  if (t.size() != r.size()) throw ValidationError("fit: sample counts differ");
  if (t.size() < 2) throw ValidationError("fit: need at least two samples");
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd A(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(t[i] > 0.0)) throw ValidationError("fit: sample times must be positive");
    if (!std::isfinite(r[i])) throw ValidationError("fit: non-finite sample");
    A(i, 0) = std::sqrt(t[i]);
    A(i, 1) = t[i];
    y[i] = r[i];
  }
  const auto qr = A.colPivHouseholderQr();
  if (qr.rank() < 2) throw ValidationError("fit: sample times do not determine both coefficients");
  const Eigen::Vector2d c = qr.solve(y);
  FitResult f;
  f.alpha = c[0];
  f.beta = c[1];
  f.residual = std::sqrt((A * c - y).squaredNorm() / static_cast<double>(n));
  f.t_min = *std::min_element(t.begin(), t.end());
  f.t_max = *std::max_element(t.begin(), t.end());
  return f;
}

std::vector<double> geometric_times(double t_min, double t_max, int n) {
  if (!(t_min > 0.0) || !(t_max > t_min) || n < 2) throw ValidationError("geometric_times: need 0 < t_min < t_max, n >= 2");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = t_min * std::pow(t_max / t_min, static_cast<double>(i) / (n - 1));
  out.back() = t_max;
  return out;
}

}  // namespace fisherflow
