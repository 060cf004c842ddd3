#include "fisherflow/data.hpp"

#include <cmath>
#include <numbers>

#include "fisherflow/errors.hpp"

namespace fisherflow {

using std::numbers::pi;

namespace {

struct Box {
  Vec2 lo, hi;
};

Box bounding_box(const TriMesh& mesh) {
  Box b{mesh.vertices().front(), mesh.vertices().front()};
  for (const auto& p : mesh.vertices()) {
    b.lo = b.lo.cwiseMin(p);
    b.hi = b.hi.cwiseMax(p);
  }
  return b;
}

}  // namespace

double Rng::normal() {
  // Box-Muller; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
}

Density eigenfunction_density(MeshPtr mesh, double amp, int p, int q) {
  if (std::abs(amp) >= 1.0) throw ValidationError("eigenfunction datum: |amp| must be below 1");
  const Box b = bounding_box(*mesh);
  const Vec2 ext = b.hi - b.lo;
  return Density::from_function(mesh, [&](const Vec2& x) {
    const double u = (x.x() - b.lo.x()) / ext.x();
    const double v = (x.y() - b.lo.y()) / ext.y();
    return 1.0 + amp * std::cos(p * pi * u) * std::cos(q * pi * v);
  });
}

Density bump_density(MeshPtr mesh, const Vec2& x0, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("bump datum: sigma must be positive");
  return Density::from_function(mesh, [&](const Vec2& x) { return std::exp(-(x - x0).squaredNorm() / (sigma * sigma)); });
}

Vec2 concave_anchor(const DomainSpec& spec, double offset) {
  if (spec.kind == DomainSpec::Kind::rectangle) return {0.5 * spec.width, 0.5 * spec.height};
  const double theta = boundary_curvature(spec).theta_at_min;
  const Vec2 dir(std::cos(theta), std::sin(theta));
  return (spec.radius(theta) - offset) * dir;
}

Density random_smooth_density(MeshPtr mesh, std::uint64_t seed, int modes) {
  Rng rng(seed);
  const Box b = bounding_box(*mesh);
  const Vec2 ext = b.hi - b.lo;
  std::vector<std::array<double, 3>> terms;  // p, q, coefficient
  for (int p = 0; p <= modes; ++p) {
    for (int q = 0; q <= modes; ++q) {
      if (p == 0 && q == 0) continue;
      terms.push_back({double(p), double(q), rng.normal() / (1.0 + p * p + q * q)});
    }
  }
  Eigen::VectorXd g(mesh->num_vertices());
  for (int i = 0; i < mesh->num_vertices(); ++i) {
    const Vec2& x = mesh->vertices()[i];
    const double u = (x.x() - b.lo.x()) / ext.x();
    const double v = (x.y() - b.lo.y()) / ext.y();
    double s = 0.0;
    for (const auto& t : terms) s += t[2] * std::cos(t[0] * pi * u) * std::cos(t[1] * pi * v);
    g[i] = s;
  }
  const double scale = g.cwiseAbs().maxCoeff();
  Eigen::VectorXd rho = (1.0 + 0.7 * g.array() / scale).cwiseMax(0.05).matrix();
  return Density(std::move(mesh), std::move(rho), true);
}

Eigen::VectorXd random_test_function(const TriMesh& mesh, std::uint64_t seed) {
  Rng rng(seed);
  const Box b = bounding_box(mesh);
  const double L = (b.hi - b.lo).maxCoeff();
  double c[10];
  for (double& x : c) x = rng.normal();
  const int p1 = 1 + static_cast<int>(rng.uniform() * 3), q1 = static_cast<int>(rng.uniform() * 3);
  const double ca = rng.normal();
  Eigen::VectorXd f(mesh.num_vertices());
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const double u = (mesh.vertices()[i].x() - b.lo.x()) / L;
    const double v = (mesh.vertices()[i].y() - b.lo.y()) / L;
    f[i] = c[0] * u + c[1] * v + c[2] * u * u + c[3] * u * v + c[4] * v * v + 0.5 * (c[5] * u * u * u + c[6] * u * u * v +
           c[7] * u * v * v + c[8] * v * v * v) + ca * std::cos(p1 * pi * u) * std::cos(q1 * pi * v) + c[9];
  }
  return f;
}

Eigen::VectorXd nodal_squared_gradient(const TriMesh& mesh, const Eigen::VectorXd& f) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(mesh.num_vertices());
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(mesh.num_vertices());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double g2 = mesh.gradient(t, f).squaredNorm();
    const double a = mesh.triangle_area(t);
    for (int v : mesh.triangles()[t]) {
      sum[v] += a * g2;
      weight[v] += a;
    }
  }
  return sum.cwiseQuotient(weight);
}

}  // namespace fisherflow
