#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fisherflow/functionals.hpp"

namespace fisherflow {

class HeatOperator;

enum class Provenance { heat, jko, synthetic, regularized };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// Time-sampled densities on one mesh. Momenta are staggered: momenta[n]
/// lives on (times[n], times[n+1]).
struct Curve {
  std::vector<double> times;
  std::vector<Density> densities;
  std::optional<std::vector<VectorField>> momenta;
  Provenance provenance = Provenance::synthetic;

  int size() const { return static_cast<int>(times.size()); }
  const TriMesh& mesh() const { return densities.front().mesh(); }
  const MeshPtr& mesh_ptr() const { return densities.front().mesh_ptr(); }

  /// Throws ValidationError on broken invariants.
  void validate() const;

  /// Manifest {times, provenance, mesh_checksum, samples: [[...], ...]}.
  nlohmann::json to_json() const;
  static Curve from_json(const nlohmann::json& j, MeshPtr mesh);
};

/// Midpoint density (rho_n + rho_{n+1}) / 2 of interval n.
Eigen::VectorXd interval_midpoint(const Curve& c, int n);

/// Test functions used by continuity_residual, evaluated at the vertices.
std::vector<Eigen::VectorXd> continuity_test_functions(const TriMesh& mesh, int count);

/// Max over test functions phi of
///   |sum_i m_i phi_i (rho_{n+1} - rho_n) - dt_n sum_T area_T grad phi . F_T|
/// summed over intervals, divided by max |phi|.
double continuity_residual(const Curve& c, int test_count);

/// Momenta F^{n+1/2} = grad phi with A phi = M (rho_{n+1} - rho_n) / dt_n,
/// which satisfy the discrete continuity equation exactly.
std::vector<VectorField> reconstruct_momenta(const Curve& c);

/// Replaces every density by its heat image at time eps (backward Euler with
/// step dt, default eps / 20). Momenta, if present, are rebuilt with
/// reconstruct_momenta.
Curve heat_regularize(const Curve& c, double eps, const HeatOperator& op, double dt = 0.0);

/// Discretely normalized bump exp(-1 / (1 - s^2)) weights for offsets
/// k = -K..K on a grid of spacing `spacing` (index K is the centre).
std::vector<double> mollifier_weights(double delta, double spacing);

/// Time convolution on a uniform grid. Densities are extended by their
/// endpoint values, momenta by zero (the extended curve is constant).
Curve mollify_time(const Curve& c, double delta);

}  // namespace fisherflow
