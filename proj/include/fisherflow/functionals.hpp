#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

#include "fisherflow/mesh.hpp"
#include "json.hpp"

namespace fisherflow {

/// Nodal probability density rho_i >= 0 with sum_i m_i rho_i = 1.
class Density {
 public:
  /// Validates nonnegativity and unit mass (relative 1e-9). With
  /// `normalize`, the values are rescaled to unit mass first.
  Density(MeshPtr mesh, Eigen::VectorXd values, bool normalize = false);

  static Density uniform(MeshPtr mesh);
  /// Samples f at the vertices and normalizes. Negative samples are an error.
  static Density from_function(MeshPtr mesh, const std::function<double(const Vec2&)>& f);

  const TriMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  const Eigen::VectorXd& values() const { return values_; }
  double operator[](int i) const { return values_[i]; }
  int size() const { return static_cast<int>(values_.size()); }
  double mass() const;
  double min() const { return values_.minCoeff(); }

  /// {"mesh_checksum": ..., "values": [...]}
  nlohmann::json to_json() const;
  /// Throws ValidationError when the checksum does not match `mesh`.
  static Density from_json(const nlohmann::json& j, MeshPtr mesh);

 private:
  MeshPtr mesh_;
  Eigen::VectorXd values_;
};

/// Per-triangle vectors. `defined[t] == 0` marks triangles where the field
/// could not be evaluated (log-derivative at a zero vertex).
struct VectorField {
  std::vector<Vec2> values;
  std::vector<char> defined;

  VectorField() = default;
  explicit VectorField(int n_triangles)
      : values(n_triangles, Vec2::Zero()), defined(n_triangles, 1) {}

  int size() const { return static_cast<int>(values.size()); }
  VectorField operator-() const;
  VectorField operator*(double s) const;
  VectorField operator+(const VectorField& o) const;
};

/// Per-triangle gradient of the P1 interpolant of nodal values.
VectorField nodal_gradient(const TriMesh& mesh, const Eigen::VectorXd& nodal);

/// Arithmetic mean of the three nodal values on each triangle.
Eigen::VectorXd cell_average(const TriMesh& mesh, const Eigen::VectorXd& nodal);

/// Sum_i m_i rho_i log rho_i with 0 log 0 = 0.
double entropy(const Density& rho);

/// 4 sum_T area_T |grad sqrt(rho)|^2.
double fisher(const Density& rho);

/// sum_T area_T rhobar_T |grad log rho|^2. Triangles touching a zero vertex
/// give +inf unless the density vanishes on the whole triangle.
double fisher_log_form(const Density& rho);

/// Porous-medium Fisher information sum_T area_T rhobar_T |grad rho^(m-1)|^2
/// for 1 < m < 3/2.
double fisher_m(const Density& rho, double m);

/// sum_i m_i rho_i^m for m > 1.
double energy_m(const Density& rho, double m);

/// A(a, b) = |b|^2 / a, 0 if a = b = 0, +inf if a = 0 and b != 0.
double action_density(double a, const Vec2& b);

/// sum_T area_T A(rhobar_T, F_T).
double kinetic_action(const TriMesh& mesh, const Eigen::VectorXd& rho, const VectorField& F);
double kinetic_action(const Density& rho, const VectorField& F);

/// Per-triangle grad log rho; triangles with a zero vertex are undefined.
VectorField log_derivative(const Density& rho);

}  // namespace fisherflow
