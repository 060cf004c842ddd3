#include <doctest.h>

#include <cmath>

#include "fisherflow/curves.hpp"
#include "fisherflow/data.hpp"
#include "fisherflow/errors.hpp"
#include "fisherflow/heat.hpp"

using namespace fisherflow;

namespace {

MeshPtr square(double h) { return build_mesh(DomainSpec::rectangle(1, 1, h)); }

Curve constant_curve(const Density& rho, int n, bool with_momenta) {
  Curve c;
  for (int i = 0; i < n; ++i) {
    c.times.push_back(0.1 * i);
    c.densities.push_back(rho);
  }
  if (with_momenta) c.momenta = std::vector<VectorField>(n - 1, VectorField(rho.mesh().num_triangles()));
  return c;
}

// Straight-line interpolation between two densities, optionally with a
// sawtooth in time.
Curve synthetic_curve(const Density& a, const Density& b, int n, bool sawtooth) {
  Curve c;
  for (int i = 0; i < n; ++i) {
    double s = static_cast<double>(i) / (n - 1);
    if (sawtooth) s = (i % 2 == 0) ? 0.2 : 0.8;
    c.times.push_back(0.01 * i);
    c.densities.emplace_back(a.mesh_ptr(), (1 - s) * a.values() + s * b.values(), true);
  }
  return c;
}

double time_variation(const Curve& c) {
  double tv = 0.0;
  for (int n = 0; n + 1 < c.size(); ++n) {
    tv += (c.densities[n + 1].values() - c.densities[n].values()).cwiseAbs().sum();
  }
  return tv;
}

double total_action(const Curve& c) {
  double s = 0.0;
  for (int n = 0; n + 1 < c.size(); ++n) {
    s += kinetic_action(c.mesh(), interval_midpoint(c, n), (*c.momenta)[n]) * (c.times[n + 1] - c.times[n]);
  }
  return s;
}

}  // namespace

TEST_SUITE("curves") {

TEST_CASE("curve invariants") {
  auto mesh = square(0.25);
  Curve c = constant_curve(Density::uniform(mesh), 3, true);
  c.validate();
  c.times[2] = c.times[1];
  CHECK_THROWS_AS(c.validate(), ValidationError);
  Curve d = constant_curve(Density::uniform(mesh), 3, true);
  d.momenta->pop_back();
  CHECK_THROWS_AS(d.validate(), ValidationError);
  Curve e = constant_curve(Density::uniform(mesh), 3, false);
  CHECK_THROWS_AS(continuity_residual(e, 4), ValidationError);
}

TEST_CASE("curve json round trip") {
  auto mesh = square(0.25);
  HeatOperator op(mesh);
  const Curve c = op.evolve(eigenfunction_density(mesh), 0.01, 1e-3, {0.0, 0.005, 0.01});
  const auto j = c.to_json();
  CHECK(j.at("provenance") == "heat");
  CHECK(j.at("mesh_checksum") == mesh->checksum());
  const Curve back = Curve::from_json(j, mesh);
  CHECK(back.times == c.times);
  CHECK((back.densities[2].values() - c.densities[2].values()).norm() == 0.0);
  CHECK(back.momenta->at(1).values[5] == c.momenta->at(1).values[5]);
  CHECK_THROWS_AS(Curve::from_json(j, square(0.2)), ValidationError);
}

TEST_CASE("continuity residual") {
  SUBCASE("constant curve") {
    auto mesh = square(0.1);
    CHECK(continuity_residual(constant_curve(eigenfunction_density(mesh), 4, true), 12) <= 1e-12);
  }
  SUBCASE("heat flow with staggered momenta") {
    auto mesh = square(0.02);
    HeatOperator op(mesh);
    const Density rho0 = eigenfunction_density(mesh);
    const double T = 0.01;
    const Curve c1 = op.evolve(rho0, T, 1e-4, uniform_times(T, 1e-4));
    const Curve c2 = op.evolve(rho0, T, 5e-5, uniform_times(T, 5e-5));
    const double r1 = continuity_residual(c1, 12), r2 = continuity_residual(c2, 12);
    CHECK(r1 <= 5e-3);
    CHECK(r2 <= 0.55 * r1);

    Curve frozen = c1;
    for (auto& F : *frozen.momenta) F = VectorField(mesh->num_triangles());
    const double dH = std::abs(entropy(c1.densities.back()) - entropy(c1.densities.front()));
    CHECK(continuity_residual(frozen, 12) > 0.1 * dH);

    Curve rebuilt = c1;
    rebuilt.momenta = reconstruct_momenta(c1);
    CHECK(continuity_residual(rebuilt, 12) <= 1e-10);
  }
}

TEST_CASE("heat regularization") {
  auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.05));
  HeatOperator op(mesh);
  const Density uni = Density::uniform(mesh);
  CHECK_THROWS_AS(heat_regularize(constant_curve(uni, 3, false), 0.0, op), ValidationError);

  const Curve cu = heat_regularize(constant_curve(uni, 3, true), 1e-3, op);
  CHECK(cu.provenance == Provenance::regularized);
  for (const auto& d : cu.densities) CHECK((d.values() - uni.values()).cwiseAbs().maxCoeff() < 1e-12);

  // A curve touching zero: entropy decreases slice by slice, positivity after.
  Eigen::VectorXd v = bump_density(mesh, concave_anchor(mesh->spec(), 0.1), 0.1).values();
  for (auto& x : v) x = x < 0.5 ? 0.0 : x;
  const Density a(mesh, v, true);
  const Curve c = synthetic_curve(a, random_smooth_density(mesh, 5), 5, false);
  const Curve r = heat_regularize(c, 1e-3, op);
  for (int n = 0; n < c.size(); ++n) {
    CHECK(entropy(r.densities[n]) <= entropy(c.densities[n]) + 1e-8);
    CHECK(r.densities[n].min() > 0.0);
  }
}

TEST_CASE("time mollification") {
  auto mesh = square(0.1);
  const Density a = eigenfunction_density(mesh);
  const Density b = random_smooth_density(mesh, 9);

  SUBCASE("validation") {
    const Curve c = synthetic_curve(a, b, 6, false);
    CHECK_THROWS_AS(mollify_time(c, 0.01), ValidationError);
    CHECK_THROWS_AS(mollify_time(c, 0.005), ValidationError);
    CHECK_THROWS_AS(mollify_time(c, -1), ValidationError);
    CHECK_NOTHROW(mollify_time(c, 0.025));
  }
  SUBCASE("constant curve") {
    const Curve c = constant_curve(a, 6, true);
    const Curve m = mollify_time(c, 0.25);
    for (const auto& d : m.densities) CHECK((d.values() - a.values()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("affine in time is preserved away from the ends") {
    const int N = 21;
    const Curve c = synthetic_curve(a, b, N, false);
    const double delta = 0.035;  // three grid steps
    const Curve m = mollify_time(c, delta);
    const int K = static_cast<int>(mollifier_weights(delta, 0.01).size() / 2);
    for (int n = K; n < N - K; ++n) {
      CHECK((m.densities[n].values() - c.densities[n].values()).cwiseAbs().maxCoeff() < 1e-9);
    }
    for (const auto& d : m.densities) CHECK(d.mass() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("sawtooth against direct summation") {
    const int N = 12;
    const Curve c = synthetic_curve(a, b, N, true);
    const double delta = 0.03;
    const Curve m = mollify_time(c, delta);
    CHECK(time_variation(m) < time_variation(c));
    // Direct convolution with freshly computed bump weights.
    for (int n = 0; n < N; ++n) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(a.size());
      double wsum = 0.0;
      for (int k = -5; k <= 5; ++k) {
        const double s = k * 0.01 / delta;
        if (std::abs(s) >= 1) continue;
        const double w = std::exp(-1 / (1 - s * s));
        acc += w * c.densities[std::min(std::max(n + k, 0), N - 1)].values();
        wsum += w;
      }
      CHECK((m.densities[n].values() - acc / wsum).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("kinetic action does not increase") {
    auto fine = square(0.05);
    HeatOperator op(fine);
    const Curve c = op.evolve(random_smooth_density(fine, 4), 0.02, 1e-3, uniform_times(0.02, 1e-3));
    const Curve m = mollify_time(c, 4.5e-3);
    CHECK(total_action(m) <= total_action(c) + 1e-8);
    // The mollified pair still satisfies the same discrete continuity equation.
    CHECK(continuity_residual(m, 12) <= continuity_residual(c, 12) + 1e-10);
  }
}

}
