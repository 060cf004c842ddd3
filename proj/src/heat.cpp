#include "fisherflow/heat.hpp"

#include <cmath>

#include "fisherflow/errors.hpp"

namespace fisherflow {

HeatOperator::HeatOperator(MeshPtr mesh) : mesh_(std::move(mesh)) {
  if (!mesh_) throw ValidationError("heat: null mesh");
}

const HeatOperator::Solver& HeatOperator::solver(double dt) const {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(dt);
  if (it != cache_.end()) return *it->second;
  Eigen::SparseMatrix<double> sys = dt * mesh_->stiffness();
  for (int i = 0; i < mesh_->num_vertices(); ++i) sys.coeffRef(i, i) += mesh_->lumped_mass()[i];
  auto s = std::make_unique<Solver>();
  s->compute(sys);
  if (s->info() != Eigen::Success) throw NumericError("heat: factorization of M + dt A failed");
  return *cache_.emplace(dt, std::move(s)).first->second;
}

Eigen::VectorXd HeatOperator::step_values(const Eigen::VectorXd& u, double dt) const {
  if (!(dt > 0.0)) throw ValidationError("heat: dt must be positive");
  if (u.size() != mesh_->num_vertices()) throw ValidationError("heat: vector size does not match mesh");
  const Eigen::VectorXd rhs = mesh_->lumped_mass().cwiseProduct(u);
  const Solver& s = solver(dt);
  Eigen::VectorXd out = s.solve(rhs);
  if (s.info() != Eigen::Success || !out.allFinite()) throw NumericError("heat: linear solve failed");
  return out;
}

Density HeatOperator::step(const Density& rho, double dt) const {
  if (rho.mesh_ptr() != mesh_ && rho.mesh().checksum() != mesh_->checksum()) {
    throw ValidationError("heat: density lives on a different mesh");
  }
  Eigen::VectorXd v = step_values(rho.values(), dt);
  const double lo = v.minCoeff();
  if (lo < 0.0) {
    // Round-off of order machine epsilon times the maximum is tolerated and
    // clipped; anything larger contradicts the discrete maximum principle.
    if (mesh_->m_matrix() && lo < -1e-12 * v.cwiseAbs().maxCoeff()) {
      throw NumericError("heat: negative density on an M-matrix mesh", lo);
    }
    v = v.cwiseMax(0.0);
  }
  return Density(mesh_, std::move(v), true);
}

Curve HeatOperator::evolve(const Density& rho0, double T, double dt, const std::vector<double>& sample_times) const {
  if (!(T >= 0.0)) throw ValidationError("heat: T must be nonnegative");
  if (!(dt > 0.0)) throw ValidationError("heat: dt must be positive");
  std::vector<long> steps;
  for (double s : sample_times) {
    if (s < 0.0 || s > T * (1.0 + 1e-12)) throw ValidationError("heat: sample time outside [0, T]");
    const long n = std::lround(s / dt);
    if (!steps.empty() && n <= steps.back()) {
      throw ValidationError("heat: sample times must be increasing and at least one step apart");
    }
    steps.push_back(n);
  }
  if (steps.empty()) steps.push_back(0);

  Curve c;
  c.provenance = Provenance::heat;
  Density rho = rho0;
  long done = 0;
  for (long n : steps) {
    for (; done < n; ++done) rho = step(rho, dt);
    c.times.push_back(static_cast<double>(n) * dt);
    c.densities.push_back(rho);
  }
  std::vector<VectorField> mom;
  const TriMesh& mesh = *mesh_;
  for (int n = 0; n + 1 < c.size(); ++n) {
    const Eigen::VectorXd mid = interval_midpoint(c, n);
    mom.push_back(-nodal_gradient(mesh, mid));
  }
  c.momenta = std::move(mom);
  return c;
}

Eigen::VectorXd HeatOperator::apply_to_function(const Eigen::VectorXd& f, double t, double dt) const {
  if (!(t >= 0.0)) throw ValidationError("heat: t must be nonnegative");
  if (!(dt > 0.0)) throw ValidationError("heat: dt must be positive");
  if (t == 0.0) return f;
  const long n = std::max(1L, std::lround(t / dt));
  const double h = t / static_cast<double>(n);
  Eigen::VectorXd u = f;
  for (long i = 0; i < n; ++i) u = step_values(u, h);
  return u;
}

namespace {

template <class State, class Step>
std::vector<State> graded(State u, const std::vector<double>& times, double rel_step, Step step) {
  if (!(rel_step > 0.0 && rel_step <= 1.0)) throw ValidationError("heat: rel_step must lie in (0, 1]");
  std::vector<State> out;
  double t = 0.0;
  for (double next : times) {
    if (!(next > t)) throw ValidationError("heat: graded sample times must be positive and increasing");
    const long n = std::max(1L, static_cast<long>(std::ceil((next - t) / (rel_step * next) - 1e-9)));
    const double h = (next - t) / static_cast<double>(n);
    for (long i = 0; i < n; ++i) u = step(u, h);
    out.push_back(u);
    t = next;
  }
  return out;
}

}  // namespace

Curve HeatOperator::sample_graded(const Density& rho0, const std::vector<double>& times, double rel_step) const {
  Curve c;
  c.provenance = Provenance::heat;
  c.times = times;
  c.densities = graded(rho0, times, rel_step, [this](const Density& r, double h) { return step(r, h); });
  return c;
}

std::vector<Eigen::VectorXd> HeatOperator::apply_graded(const Eigen::VectorXd& f, const std::vector<double>& times,
                                                        double rel_step) const {
  return graded(f, times, rel_step, [this](const Eigen::VectorXd& u, double h) { return step_values(u, h); });
}

std::vector<double> uniform_times(double T, double spacing) {
  const long n = std::lround(T / spacing);
  std::vector<double> out;
  for (long i = 0; i <= n; ++i) out.push_back(static_cast<double>(i) * spacing);
  return out;
}

}  // namespace fisherflow
