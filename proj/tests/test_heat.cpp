#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fisherflow/data.hpp"
#include "fisherflow/errors.hpp"
#include "fisherflow/fit.hpp"
#include "fisherflow/heat.hpp"

using namespace fisherflow;
using std::numbers::pi;

namespace {

MeshPtr square(double h) { return build_mesh(DomainSpec::rectangle(1, 1, h)); }

// Max nodal error of the heat flow from the eigenfunction datum against the
// separated-variables solution.
double eigen_error(double h, double dt, double T) {
  auto mesh = square(h);
  HeatOperator op(mesh);
  const Curve c = op.evolve(eigenfunction_density(mesh), T, dt, {T});
  const double decay = std::exp(-2 * pi * pi * c.times.back());
  double err = 0.0;
  for (int i = 0; i < mesh->num_vertices(); ++i) {
    const Vec2& x = mesh->vertices()[i];
    const double exact = 1.0 + 0.5 * decay * std::cos(pi * x.x()) * std::cos(pi * x.y());
    err = std::max(err, std::abs(c.densities.back()[i] - exact));
  }
  return err;
}

}  // namespace

TEST_SUITE("heat") {

TEST_CASE("uniform density is a steady state") {
  auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.05));
  HeatOperator op(mesh);
  const Density u = Density::uniform(mesh);
  const Density v = op.step(u, 1e-3);
  CHECK((v.values() - u.values()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("eigenfunction datum matches the analytic solution") {
  const double e1 = eigen_error(0.02, 1e-4, 0.05);
  CHECK(e1 <= 1e-2);
  CHECK(std::exp(-2 * pi * pi * 0.05) == doctest::Approx(0.3727).epsilon(1e-3));
}

TEST_CASE("mass conservation and positivity") {
  auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.05));
  HeatOperator op(mesh);
  Density rho = bump_density(mesh, concave_anchor(mesh->spec(), 0.05), 0.05);
  Eigen::VectorXd raw = rho.values();
  for (int i = 0; i < 500; ++i) raw = op.step_values(raw, 1e-4);
  CHECK(mesh->lumped_mass().dot(raw) == doctest::Approx(1.0).epsilon(1e-9));
  if (mesh->m_matrix()) CHECK(raw.minCoeff() >= 0.0);
  // Smoothing: strictly positive after any positive time.
  CHECK(op.step(rho, 1e-3).min() > 0.0);
}

TEST_CASE("evolve") {
  auto mesh = square(0.02);
  HeatOperator op(mesh);
  const Density rho0 = eigenfunction_density(mesh);
  SUBCASE("T = 0 returns the datum") {
    const Curve c = op.evolve(rho0, 0.0, 1e-4, {0.0});
    REQUIRE(c.size() == 1);
    CHECK((c.densities[0].values() - rho0.values()).norm() == 0.0);
  }
  SUBCASE("geometric amplitude decay") {
    const double ds = 0.01;
    const Curve c = op.evolve(rho0, 0.04, 1e-4, uniform_times(0.04, ds));
    REQUIRE(c.size() == 5);
    const int corner = nearest_vertex(*mesh, {0, 0});
    for (int n = 0; n + 1 < c.size(); ++n) {
      const double a0 = c.densities[n][corner] - 1.0, a1 = c.densities[n + 1][corner] - 1.0;
      CHECK(std::abs(a1 / a0 / std::exp(-2 * pi * pi * ds) - 1.0) <= 0.02);
      CHECK(entropy(c.densities[n + 1]) <= entropy(c.densities[n]));
    }
    CHECK(c.momenta->size() == 4);
    CHECK(c.provenance == Provenance::heat);
  }
  SUBCASE("sample times snap to the step grid") {
    const Curve c = op.evolve(rho0, 0.001, 1e-4, {0.0, 0.00026, 0.001});
    CHECK(c.times[1] == doctest::Approx(3e-4).epsilon(1e-12));
    CHECK_THROWS_AS(op.evolve(rho0, 0.001, 1e-4, {0.0, 0.002}), ValidationError);
  }
}

TEST_CASE("time error halves with dt") {
  auto mesh = square(0.05);
  HeatOperator op(mesh);
  const Density rho0 = random_smooth_density(mesh, 3);
  const Curve fine = op.evolve(rho0, 0.02, 2.5e-5, {0.02});
  double prev = 0.0;
  for (double dt : {1e-3, 5e-4, 2.5e-4}) {
    const Curve c = op.evolve(rho0, 0.02, dt, {0.02});
    const double err = (c.densities.back().values() - fine.densities.back().values()).cwiseAbs().maxCoeff();
    if (prev > 0) CHECK(err <= 0.6 * prev);
    prev = err;
  }
}

TEST_CASE("apply_to_function") {
  auto mesh = square(0.02);
  HeatOperator op(mesh);
  const Eigen::VectorXd three = Eigen::VectorXd::Constant(mesh->num_vertices(), 3.0);
  CHECK((op.apply_to_function(three, 0.01, 1e-4) - three).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::VectorXd f(mesh->num_vertices());
  for (int i = 0; i < f.size(); ++i) f[i] = std::cos(pi * mesh->vertices()[i].x());
  const double t = 0.02;
  const Eigen::VectorXd g = op.apply_to_function(f, t, 1e-4);
  const int corner = nearest_vertex(*mesh, {0, 0});
  CHECK(std::abs(g[corner] / std::exp(-pi * pi * t) - 1.0) <= 0.01);
  CHECK(g.maxCoeff() <= f.maxCoeff() + 1e-10);
  CHECK(g.minCoeff() >= f.minCoeff() - 1e-10);
  CHECK_THROWS_AS(op.apply_to_function(f, -1.0, 1e-4), ValidationError);
}

TEST_CASE("self-adjointness in the lumped inner product") {
  auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.05));
  HeatOperator op(mesh);
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const Eigen::VectorXd f = random_test_function(*mesh, s);
    const Eigen::VectorXd g = random_test_function(*mesh, s + 10);
    const auto& m = mesh->lumped_mass();
    const double lhs = m.dot(op.apply_to_function(f, 0.01, 1e-3).cwiseProduct(g));
    const double rhs = m.dot(f.cwiseProduct(op.apply_to_function(g, 0.01, 1e-3)));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}


TEST_CASE("graded sampling") {
  auto mesh = square(0.05);
  HeatOperator op(mesh);
  const Density rho0 = eigenfunction_density(mesh);
  const std::vector<double> times = geometric_times(1e-4, 1e-2, 8);
  const Curve c = op.sample_graded(rho0, times, 0.02);
  REQUIRE(c.size() == 8);
  CHECK(c.times == times);
  CHECK(!c.momenta);
  CHECK(c.provenance == Provenance::heat);
  // Each sample tracks the separated-variables solution; steps are no longer
  // than 2% of the sample time so the time error stays below the space error.
  for (int k = 0; k < c.size(); ++k) {
    const double decay = std::exp(-2 * pi * pi * times[k]);
    double err = 0.0;
    for (int i = 0; i < mesh->num_vertices(); ++i) {
      const Vec2& x = mesh->vertices()[i];
      err = std::max(err, std::abs(c.densities[k][i] - 1.0 - 0.5 * decay * std::cos(pi * x.x()) * std::cos(pi * x.y())));
    }
    CAPTURE(k);
    CHECK(err <= 1e-2);
  }
  const auto values = op.apply_graded(rho0.values(), times, 0.02);
  REQUIRE(values.size() == times.size());
  CHECK((values.back() - c.densities.back().values()).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK_THROWS_AS(op.sample_graded(rho0, {1e-3, 1e-3}, 0.05), ValidationError);
  CHECK_THROWS_AS(op.sample_graded(rho0, {0.0, 1e-3}, 0.05), ValidationError);
  CHECK_THROWS_AS(op.sample_graded(rho0, {1e-3}, 0.0), ValidationError);
  CHECK_THROWS_AS(op.sample_graded(rho0, {1e-3}, 1.5), ValidationError);
}

}
