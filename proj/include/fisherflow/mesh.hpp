#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fisherflow {

using Vec2 = Eigen::Vector2d;
using Triangle = std::array<int, 3>;

/// Parametric description of a flat planar domain.
///
/// Rectangles occupy [0, width] x [0, height]. Polar stars are centred at the
/// origin with boundary r(theta) = r0 + a cos(k theta).
struct DomainSpec {
  enum class Kind { rectangle, polar_star };

  Kind kind = Kind::rectangle;
  double width = 1.0;
  double height = 1.0;
  double r0 = 1.0;
  double a = 0.0;
  int k = 3;
  double h = 0.05;  // target edge length

  static DomainSpec rectangle(double width, double height, double h);
  static DomainSpec polar_star(double r0, double a, int k, double h);

  /// Throws ValidationError if the spec is degenerate.
  void validate() const;

  bool is_convex() const;
  double radius(double theta) const;
  double radius_d1(double theta) const;
  double radius_d2(double theta) const;
  Vec2 boundary_point(double theta) const;
  /// Analytic point-in-domain test (closed domain, tolerance tol).
  bool contains(const Vec2& p, double tol = 0.0) const;
  /// Closed-form area of the analytic domain.
  double exact_area() const;
  /// Smallest geometric length scale the mesh must resolve.
  double feature_size() const;

  nlohmann::json to_json() const;
  static DomainSpec from_json(const nlohmann::json& j);
};

/// Triangulation with P1 finite element data.
///
/// Triangles are counter-clockwise. Lumped mass is one third of the adjacent
/// triangle areas; the stiffness matrix is the cotangent Laplacian, whose
/// rows sum to zero so constants lie in its kernel (zero-flux Neumann).
class TriMesh {
 public:
  /// Builds all derived data from raw geometry. The boundary loop may be empty
  /// for meshes assembled by hand (it is then recovered from the triangles).
  TriMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles,
          std::vector<int> boundary_loop = {}, DomainSpec spec = {});

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<int>& boundary_loop() const { return boundary_loop_; }
  const Eigen::VectorXd& lumped_mass() const { return lumped_mass_; }
  const Eigen::SparseMatrix<double>& stiffness() const { return stiffness_; }
  const DomainSpec& spec() const { return spec_; }

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }
  double area_total() const { return area_total_; }
  double triangle_area(int t) const { return areas_[t]; }
  /// Gradient of the barycentric hat function of local vertex `local` on t.
  const Vec2& basis_gradient(int t, int local) const { return grads_[t][local]; }
  Vec2 centroid(int t) const;

  /// Constant gradient of the P1 interpolant of nodal values on triangle t.
  Vec2 gradient(int t, std::span<const double> nodal) const;
  Vec2 gradient(int t, const Eigen::VectorXd& nodal) const;

  bool m_matrix() const { return m_matrix_; }
  double max_edge_length() const;
  double min_angle() const;
  const std::string& checksum() const { return checksum_; }

  /// Throws MeshError if any structural invariant fails.
  void check_invariants() const;

  nlohmann::json to_json() const;

 private:
  std::vector<Vec2> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<int> boundary_loop_;
  DomainSpec spec_;
  std::vector<double> areas_;
  std::vector<std::array<Vec2, 3>> grads_;
  Eigen::VectorXd lumped_mass_;
  Eigen::SparseMatrix<double> stiffness_;
  double area_total_ = 0.0;
  bool m_matrix_ = true;
  std::string checksum_;
};

using MeshPtr = std::shared_ptr<const TriMesh>;

/// Boundary convexity defect S (II >= -S) and Ricci bound K (0 on flat domains).
struct CurvatureBound {
  double S = 0.0;
  double K = 0.0;
  double kappa_min = 0.0;
  double theta_at_min = 0.0;

  nlohmann::json to_json() const;
};

/// Triangulates the domain. Rectangles use a structured right-triangle grid;
/// polar stars use a boundary-conforming Delaunay triangulation of boundary
/// samples plus an interior triangular lattice.
MeshPtr build_mesh(const DomainSpec& spec);

CurvatureBound boundary_curvature(const DomainSpec& spec, int n_samples = 4096);

/// Signed curvature of the polar boundary curve (positive where convex).
double polar_curvature(const DomainSpec& spec, double theta);

/// Shortest-path distances on the graph of mesh edges plus the opposite-vertex
/// diagonal of every convex pair of adjacent triangles. Rows follow `sources`.
Eigen::MatrixXd geodesic_distances(const TriMesh& mesh, std::span<const int> sources);

/// Exact shortest-path distances inside the mesh's boundary polygon: the
/// straight segment when it stays inside, otherwise the taut path through
/// reflex boundary vertices. Equals the Euclidean distance on convex meshes.
Eigen::MatrixXd polygon_geodesic_distances(const TriMesh& mesh, std::span<const int> sources);
/// Same, restricted to the given target vertices (sources x targets).
Eigen::MatrixXd polygon_geodesic_distances(const TriMesh& mesh, std::span<const int> sources,
                                           std::span<const int> targets);

/// Point-in-polygon test against the mesh's boundary polyline.
bool inside_boundary_polygon(const TriMesh& mesh, const Vec2& p);

/// Vertex nearest to p.
int nearest_vertex(const TriMesh& mesh, const Vec2& p);

}  // namespace fisherflow
