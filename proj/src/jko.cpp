#include "fisherflow/jko.hpp"

#include <Eigen/SparseCore>

#include <cmath>

#include "fisherflow/errors.hpp"

namespace fisherflow {

void JkoConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("jko: tau must be positive");
  if (!(epsilon > 0.0)) throw ValidationError("jko: epsilon must be positive");
  if (inner_iters < 1) throw ValidationError("jko: inner_iters must be positive");
  if (!(inner_tol > 0.0)) throw ValidationError("jko: inner_tol must be positive");
}

nlohmann::json JkoConfig::to_json() const {
  return {{"tau", tau}, {"epsilon", epsilon}, {"inner_iters", inner_iters}, {"inner_tol", inner_tol}};
}

namespace {

// Entries with C_ij > kCutoff * eps are dropped; exp(-40) is below double
// resolution relative to the diagonal.
constexpr double kCutoff = 40.0;

void require_full_support(const TriMesh& mesh, const CostTable& cost) {
  if (cost.checksum() != mesh.checksum()) throw ValidationError("jko: cost table belongs to another mesh");
  if (cost.size() != mesh.num_vertices()) {
    throw ValidationError("jko: cost table must cover every vertex (no subsampling)");
  }
}

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Symmetric kernel R = diag(s) (m x m) exp(-C / eps) diag(s), with s chosen so
// that both marginals of R are the normalized volume measure.
SpMat reference_kernel(const TriMesh& mesh, const CostTable& cost, double eps) {
  const int n = mesh.num_vertices();
  const Eigen::VectorXd& m = mesh.lumped_mass();
  const Eigen::MatrixXd& C = cost.matrix();
  std::vector<Eigen::Triplet<double>> entries;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      if (C(i, j) <= kCutoff * eps) entries.emplace_back(i, j, m[i] * m[j] * std::exp(-C(i, j) / eps));
    }
  }
  SpMat K(n, n);
  K.setFromTriplets(entries.begin(), entries.end());

  const Eigen::VectorXd ubar = m / m.sum();
  Eigen::VectorXd s = (ubar.array() / (K * Eigen::VectorXd::Ones(n)).array()).sqrt();
  double violation = 0.0;
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd Ks = K * s;
    violation = (s.cwiseProduct(Ks) - ubar).cwiseAbs().sum();
    if (violation <= 1e-14) break;
    s = (s.array() * ubar.array() / Ks.array()).sqrt();
  }
  if (!(violation <= 1e-12)) throw NumericError("jko: reference coupling did not converge", violation);
  return s.asDiagonal() * K * s.asDiagonal();
}

Density step_with_kernel(const Density& rho_n, const SpMat& R, const JkoConfig& cfg) {
  const TriMesh& mesh = rho_n.mesh();
  const Eigen::VectorXd& m = mesh.lumped_mass();
  const Eigen::VectorXd nu = m.cwiseProduct(rho_n.values());
  const double g = 2.0 * cfg.tau / cfg.epsilon;
  const Eigen::ArrayXd mpow = m.array().pow(g / (1.0 + g));

  Eigen::VectorXd a = Eigen::VectorXd::Ones(m.size()), b, q, row, prox;
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.inner_iters; ++it) {
    b = nu.cwiseQuotient(R * a);
    q = R * b;
    row = a.cwiseProduct(q);
    if (!row.allFinite()) throw NumericError("jko: scaling overflow", residual);
    if (it > 0) {
      residual = (row - prox).cwiseAbs().sum();
      if (residual <= cfg.inner_tol) break;
    }
    prox = (q.array().pow(1.0 / (1.0 + g)) * mpow).matrix();
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = q[i] > 0.0 ? prox[i] / q[i] : 0.0;
  }
  if (!(residual <= cfg.inner_tol)) {
    throw NumericError("jko: inner iterations did not converge (residual " + std::to_string(residual) + ")", residual);
  }
  return Density(rho_n.mesh_ptr(), row.cwiseQuotient(m), true);
}

}  // namespace

double jko_transport_cost(const Density& mu, const Density& nu, const CostTable& cost, double eps,
                          const SinkhornConfig& cfg) {
  const TriMesh& mesh = mu.mesh();
  require_full_support(mesh, cost);
  const Eigen::VectorXd& m = mesh.lumped_mass();
  const Eigen::VectorXd a = cost.masses(mu), b = cost.masses(nu);
  const double ot = sinkhorn(a, b, cost.matrix(), eps, cfg).value - sinkhorn_self(b, cost.matrix(), eps, cfg);
  // With f the self potential of the volume measure, R_ij = u_i u_j exp((f_i + f_j - C_ij) / eps).
  const Eigen::VectorXd f = sinkhorn_symmetric(m / m.sum(), cost.matrix(), eps, cfg).f;
  return ot + eps * (entropy(mu) - entropy(nu)) - f.dot(a - b);
}

Density jko_step(const Density& rho_n, const CostTable& cost, const JkoConfig& cfg) {
  cfg.validate();
  require_full_support(rho_n.mesh(), cost);
  return step_with_kernel(rho_n, reference_kernel(rho_n.mesh(), cost, cfg.epsilon), cfg);
}

Curve jko_curve(const Density& rho0, double T, const CostTable& cost, const JkoConfig& cfg) {
  cfg.validate();
  require_full_support(rho0.mesh(), cost);
  const double steps = std::round(T / cfg.tau);
  if (!(T >= 0.0) || std::abs(steps * cfg.tau - T) > 1e-9 * std::max(1.0, T)) {
    throw ValidationError("jko: T must be a whole number of steps tau");
  }
  const SpMat R = reference_kernel(rho0.mesh(), cost, cfg.epsilon);
  Curve c;
  c.provenance = Provenance::jko;
  c.times.push_back(0.0);
  c.densities.push_back(rho0);
  std::vector<VectorField> momenta;
  for (int n = 0; n < static_cast<int>(steps); ++n) {
    c.densities.push_back(step_with_kernel(c.densities.back(), R, cfg));
    c.times.push_back((n + 1) * cfg.tau);
    momenta.push_back(-nodal_gradient(rho0.mesh(), interval_midpoint(c, n)));
  }
  c.momenta = std::move(momenta);
  return c;
}

}  // namespace fisherflow
