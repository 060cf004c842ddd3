#pragma once

#include <Eigen/SparseCholesky>

#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "fisherflow/curves.hpp"
#include "fisherflow/functionals.hpp"

namespace fisherflow {

/// Backward-Euler Neumann heat semigroup (M + dt A) u' = M u.
///
/// Factorizations are cached per dt behind a mutex, so one operator can be
/// shared by concurrent callers.
class HeatOperator {
 public:
  explicit HeatOperator(MeshPtr mesh);

  const TriMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }

  /// One step on raw nodal values (no normalization).
  Eigen::VectorXd step_values(const Eigen::VectorXd& u, double dt) const;

  /// One step on a density. Throws NumericError on a negative output when the
  /// mesh has the M-matrix property.
  Density step(const Density& rho, double dt) const;

  /// Heat flow sampled at `sample_times` (each rounded to the nearest step
  /// multiple; the recorded time is that multiple). Momenta are the staggered
  /// midpoint fields -(grad rho_n + grad rho_{n+1}) / 2.
  Curve evolve(const Density& rho0, double T, double dt, const std::vector<double>& sample_times) const;

  /// P_t f using round(t / dt) equal steps of size t / n (at least one).
  Eigen::VectorXd apply_to_function(const Eigen::VectorXd& f, double t, double dt) const;

  /// Values at each of the increasing times `times` (all > 0), stepping from
  /// t_{k-1} to t_k with equal steps no longer than rel_step * t_k. Suited to
  /// geometric time grids. No momenta.
  Curve sample_graded(const Density& rho0, const std::vector<double>& times, double rel_step) const;
  std::vector<Eigen::VectorXd> apply_graded(const Eigen::VectorXd& f, const std::vector<double>& times,
                                            double rel_step) const;

 private:
  using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;
  const Solver& solver(double dt) const;

  MeshPtr mesh_;
  mutable std::mutex mutex_;
  mutable std::map<double, std::unique_ptr<Solver>> cache_;
};

/// Evenly spaced sample times 0, dt_s, ..., T (inclusive).
std::vector<double> uniform_times(double T, double spacing);

}  // namespace fisherflow
