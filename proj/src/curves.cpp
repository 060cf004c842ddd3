#include "fisherflow/curves.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fisherflow/errors.hpp"
#include "fisherflow/heat.hpp"

namespace fisherflow {

using std::numbers::pi;

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::heat: return "heat";
    case Provenance::jko: return "jko";
    case Provenance::synthetic: return "synthetic";
    case Provenance::regularized: return "regularized";
  }
  return "synthetic";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "heat") return Provenance::heat;
  if (s == "jko") return Provenance::jko;
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "regularized") return Provenance::regularized;
  throw ValidationError("curve: unknown provenance '" + s + "'");
}

void Curve::validate() const {
  if (times.empty()) throw ValidationError("curve: no samples");
  if (times.size() != densities.size()) throw ValidationError("curve: times and densities differ in length");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw ValidationError("curve: times must be strictly increasing");
  }
  const std::string& sum = densities.front().mesh().checksum();
  for (const auto& d : densities) {
    if (d.mesh().checksum() != sum) throw ValidationError("curve: densities live on different meshes");
  }
  if (momenta) {
    if (momenta->size() + 1 != times.size()) throw ValidationError("curve: need one momentum field per interval");
    for (const auto& F : *momenta) {
      if (F.size() != mesh().num_triangles()) throw ValidationError("curve: momentum field does not match mesh");
    }
  }
}

nlohmann::json Curve::to_json() const {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& d : densities) {
    samples.push_back(std::vector<double>(d.values().data(), d.values().data() + d.size()));
  }
  nlohmann::json j{{"times", times},
                   {"provenance", to_string(provenance)},
                   {"mesh_checksum", mesh().checksum()},
                   {"samples", std::move(samples)}};
  if (momenta) {
    nlohmann::json mom = nlohmann::json::array();
    for (const auto& F : *momenta) {
      std::vector<double> flat;
      flat.reserve(2 * F.values.size());
      for (const auto& v : F.values) {
        flat.push_back(v.x());
        flat.push_back(v.y());
      }
      mom.push_back(std::move(flat));
    }
    j["momenta"] = std::move(mom);
  }
  return j;
}

Curve Curve::from_json(const nlohmann::json& j, MeshPtr mesh) {
  const auto sum = j.at("mesh_checksum").get<std::string>();
  if (sum != mesh->checksum()) throw ValidationError("curve: mesh checksum mismatch");
  Curve c;
  c.times = j.at("times").get<std::vector<double>>();
  c.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  for (const auto& s : j.at("samples")) {
    const auto v = s.get<std::vector<double>>();
    c.densities.emplace_back(mesh, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  if (j.contains("momenta")) {
    std::vector<VectorField> mom;
    for (const auto& m : j.at("momenta")) {
      const auto flat = m.get<std::vector<double>>();
      VectorField F(static_cast<int>(flat.size() / 2));
      for (int t = 0; t < F.size(); ++t) F.values[t] = Vec2(flat[2 * t], flat[2 * t + 1]);
      mom.push_back(std::move(F));
    }
    c.momenta = std::move(mom);
  }
  c.validate();
  return c;
}

Eigen::VectorXd interval_midpoint(const Curve& c, int n) {
  return 0.5 * (c.densities[n].values() + c.densities[n + 1].values());
}

std::vector<Eigen::VectorXd> continuity_test_functions(const TriMesh& mesh, int count) {
  Vec2 lo = mesh.vertices().front(), hi = lo;
  for (const auto& p : mesh.vertices()) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double L = (hi - lo).maxCoeff();
  // Polynomials u^p v^q of degree 1..3, then cosine products.
  std::vector<std::pair<int, int>> poly{{1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}, {3, 0}, {2, 1}, {1, 2}, {0, 3}};
  std::vector<std::pair<int, int>> cosines;
  for (int s = 1; s <= 8; ++s) {
    for (int p = 0; p <= s; ++p) cosines.emplace_back(p, s - p);
  }
  std::vector<Eigen::VectorXd> out;
  const int n = mesh.num_vertices();
  for (int idx = 0; static_cast<int>(out.size()) < count; ++idx) {
    Eigen::VectorXd phi(n);
    const bool use_poly = idx < static_cast<int>(poly.size());
    if (!use_poly && idx - poly.size() >= cosines.size()) break;
    const auto [p, q] = use_poly ? poly[idx] : cosines[idx - poly.size()];
    for (int i = 0; i < n; ++i) {
      const double u = (mesh.vertices()[i].x() - lo.x()) / L;
      const double v = (mesh.vertices()[i].y() - lo.y()) / L;
      phi[i] = use_poly ? std::pow(u, p) * std::pow(v, q) : std::cos(pi * p * u) * std::cos(pi * q * v);
    }
    out.push_back(std::move(phi));
  }
  return out;
}

double continuity_residual(const Curve& c, int test_count) {
  c.validate();
  if (!c.momenta) throw ValidationError("continuity_residual: curve has no momenta");
  if (test_count < 1) throw ValidationError("continuity_residual: test_count must be positive");
  const TriMesh& mesh = c.mesh();
  const auto tests = continuity_test_functions(mesh, test_count);
  double worst = 0.0;
  for (const auto& phi : tests) {
    const VectorField g = nodal_gradient(mesh, phi);
    const Eigen::VectorXd mphi = mesh.lumped_mass().cwiseProduct(phi);
    double total = 0.0;
    for (int n = 0; n + 1 < c.size(); ++n) {
      const double change = mphi.dot(c.densities[n + 1].values() - c.densities[n].values());
      double flux = 0.0;
      const auto& F = (*c.momenta)[n];
      for (int t = 0; t < mesh.num_triangles(); ++t) flux += mesh.triangle_area(t) * g.values[t].dot(F.values[t]);
      total += std::abs(change - (c.times[n + 1] - c.times[n]) * flux);
    }
    worst = std::max(worst, total / phi.cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<VectorField> reconstruct_momenta(const Curve& c) {
  c.validate();
  const TriMesh& mesh = c.mesh();
  const int n = mesh.num_vertices();
  // Pin vertex 0; the right-hand side has zero sum so the pinned system
  // solves the full singular one.
  const auto& A = mesh.stiffness();
  std::vector<Eigen::Triplet<double>> trip;
  for (int col = 0; col < A.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, col); it; ++it) {
      if (it.row() == 0 || it.col() == 0) continue;
      trip.emplace_back(static_cast<int>(it.row()) - 1, static_cast<int>(it.col()) - 1, it.value());
    }
  }
  Eigen::SparseMatrix<double> reduced(n - 1, n - 1);
  reduced.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(reduced);
  if (solver.info() != Eigen::Success) throw NumericError("reconstruct_momenta: factorization failed");
  std::vector<VectorField> out;
  for (int k = 0; k + 1 < c.size(); ++k) {
    const double dt = c.times[k + 1] - c.times[k];
    const Eigen::VectorXd rhs =
        mesh.lumped_mass().cwiseProduct(c.densities[k + 1].values() - c.densities[k].values()) / dt;
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
    phi.tail(n - 1) = solver.solve(rhs.tail(n - 1));
    out.push_back(nodal_gradient(mesh, phi));
  }
  return out;
}

Curve heat_regularize(const Curve& c, double eps, const HeatOperator& op, double dt) {
  if (!(eps > 0.0)) throw ValidationError("heat_regularize: eps must be positive");
  c.validate();
  if (dt <= 0.0) dt = eps / 20.0;
  const long steps = std::max(1L, std::lround(eps / dt));
  const double h = eps / static_cast<double>(steps);
  Curve out;
  out.times = c.times;
  out.provenance = Provenance::regularized;
  for (const auto& d : c.densities) {
    Density r = d;
    for (long i = 0; i < steps; ++i) r = op.step(r, h);
    out.densities.push_back(std::move(r));
  }
  if (c.momenta) out.momenta = reconstruct_momenta(out);
  return out;
}

std::vector<double> mollifier_weights(double delta, double spacing) {
  if (!(delta > spacing)) {
    throw ValidationError("mollify_time: delta must exceed the time-grid spacing");
  }
  const int K = static_cast<int>(std::ceil(delta / spacing)) - 1;
  std::vector<double> w(2 * K + 1);
  double sum = 0.0;
  for (int k = -K; k <= K; ++k) {
    const double s = k * spacing / delta;
    w[k + K] = std::abs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0;
    sum += w[k + K];
  }
  for (double& x : w) x /= sum;
  return w;
}

Curve mollify_time(const Curve& c, double delta) {
  c.validate();
  if (c.size() < 2) throw ValidationError("mollify_time: need at least two samples");
  if (!(delta > 0.0)) throw ValidationError("mollify_time: delta must be positive");
  const double spacing = (c.times.back() - c.times.front()) / (c.size() - 1);
  for (int n = 0; n + 1 < c.size(); ++n) {
    if (std::abs(c.times[n + 1] - c.times[n] - spacing) > 1e-9 * spacing) {
      throw ValidationError("mollify_time: time grid must be uniform");
    }
  }
  const auto w = mollifier_weights(delta, spacing);
  const int K = static_cast<int>(w.size() / 2);
  const int N = c.size();
  Curve out;
  out.times = c.times;
  out.provenance = c.provenance;
  for (int n = 0; n < N; ++n) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(c.densities[0].size());
    for (int k = -K; k <= K; ++k) v += w[k + K] * c.densities[std::clamp(n + k, 0, N - 1)].values();
    out.densities.emplace_back(c.mesh_ptr(), std::move(v), true);
  }
  if (c.momenta) {
    std::vector<VectorField> mom;
    const int ntri = c.mesh().num_triangles();
    for (int n = 0; n + 1 < N; ++n) {
      VectorField F(ntri);
      for (int k = -K; k <= K; ++k) {
        const int j = n + k;
        if (j < 0 || j >= N - 1) continue;
        const auto& src = (*c.momenta)[j];
        for (int t = 0; t < ntri; ++t) F.values[t] += w[k + K] * src.values[t];
      }
      mom.push_back(std::move(F));
    }
    out.momenta = std::move(mom);
  }
  return out;
}

}  // namespace fisherflow
