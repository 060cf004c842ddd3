#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

#include "fisherflow/curves.hpp"
#include "fisherflow/functionals.hpp"

namespace fisherflow {

struct SinkhornConfig {
  double epsilon = 1e-2;  // entropic regularization, length^2
  int max_iters = 20000;
  double tol = 1e-9;  // L1 marginal violation
  bool debiased = true;

  void validate() const;
  nlohmann::json to_json() const;
};

enum class GeodesicMode { polygon, graph };

/// Dense squared-distance table over a support set of mesh vertices.
class CostTable {
 public:
  CostTable(Eigen::MatrixXd C, std::vector<int> support, std::string checksum);

  /// Squared geodesic distances between mesh vertices. `polygon` uses exact
  /// shortest paths in the boundary polygon, `graph` the edge+diagonal graph.
  /// Above `max_support` vertices, every k-th vertex is kept and the others
  /// send their mass to the nearest kept vertex.
  static CostTable from_mesh(const TriMesh& mesh, GeodesicMode mode = GeodesicMode::polygon,
                             int max_support = 60000);
  /// Table over the given support vertices only; every other vertex sends
  /// its mass to the nearest support vertex.
  static CostTable from_support(const TriMesh& mesh, std::vector<int> support,
                                GeodesicMode mode = GeodesicMode::polygon);
  /// Squared Euclidean distances between free points (checksum "points").
  static CostTable from_points(const std::vector<Vec2>& points);
  /// Loads `dir/cost_<checksum>_<mode>.bin` when present, else builds and
  /// writes it.
  static CostTable cached(const TriMesh& mesh, const std::filesystem::path& dir,
                          GeodesicMode mode = GeodesicMode::polygon);

  const Eigen::MatrixXd& matrix() const { return C_; }
  const std::vector<int>& support() const { return support_; }
  const std::string& checksum() const { return checksum_; }
  int size() const { return static_cast<int>(support_.size()); }

  /// Point masses m_i rho_i gathered on the support.
  Eigen::VectorXd masses(const Density& rho) const;

  /// Binary layout, little endian: "FFCOST01", uint64 count, 16-byte mesh
  /// checksum, int32 support[count], float64 entries[count * count] row-major.
  void save(const std::filesystem::path& path) const;
  static CostTable load(const std::filesystem::path& path);

 private:
  Eigen::MatrixXd C_;
  std::vector<int> support_;
  std::vector<int> assign_;  // mesh vertex -> support slot (empty: identity)
  std::string checksum_;
};

struct SinkhornResult {
  double value = 0.0;  // OT_eps = <f, a> + <g, b>
  Eigen::VectorXd f, g;  // potentials on the full index set (0 where mass is 0)
  int iterations = 0;
  double violation = 0.0;
};

/// Entropic transport min <C, pi> + eps KL(pi | a x b) between probability
/// vectors a, b by stabilized log-domain Sinkhorn with eps-scaling.
/// Throws NumericError if the L1 marginal violation stays above tol.
SinkhornResult sinkhorn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C, double eps,
                        const SinkhornConfig& cfg);

/// OT_eps(a, a) by the symmetric fixed-point iteration; f == g.
SinkhornResult sinkhorn_symmetric(const Eigen::VectorXd& a, const Eigen::MatrixXd& C, double eps,
                                  const SinkhornConfig& cfg);
double sinkhorn_self(const Eigen::VectorXd& a, const Eigen::MatrixXd& C, double eps, const SinkhornConfig& cfg);

/// S_eps(a, b) = OT_eps(a, b) - OT_eps(a, a) / 2 - OT_eps(b, b) / 2.
double sinkhorn_divergence(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C, double eps,
                           const SinkhornConfig& cfg);

/// sqrt(S_eps) when debiased, else sqrt(OT_eps), at cfg.epsilon.
double wasserstein(const Density& rho, const Density& sigma, const CostTable& cost, const SinkhornConfig& cfg);

/// Squared distance linearly extrapolated to eps = 0 from eps and eps / 2.
double wasserstein2_extrapolated(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C,
                                 const SinkhornConfig& cfg);
double wasserstein_extrapolated(const Density& rho, const Density& sigma, const CostTable& cost,
                                const SinkhornConfig& cfg);

/// W(mu_{i-1}, mu_{i+1}) / (t_{i+1} - t_{i-1}) with the extrapolated distance.
double metric_speed(const Curve& curve, int t_index, const CostTable& cost, const SinkhornConfig& cfg);

}  // namespace fisherflow
