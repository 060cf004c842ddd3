#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "fisherflow/data.hpp"
#include "fisherflow/errors.hpp"
#include "fisherflow/heat.hpp"
#include "fisherflow/transport.hpp"

using namespace fisherflow;

namespace {

MeshPtr square(double h) { return build_mesh(DomainSpec::rectangle(1, 1, h)); }

SinkhornConfig config(double eps) {
  SinkhornConfig cfg;
  cfg.epsilon = eps;
  return cfg;
}

// Exact W^2 between uniform measures on equal-size point sets, by brute force
// over all permutation couplings.
double brute_force_w2(const std::vector<Vec2>& x, const std::vector<Vec2>& y) {
  std::vector<int> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) c += (x[i] - y[perm[i]]).squaredNorm();
    best = std::min(best, c / static_cast<double>(x.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Eigen::VectorXd dirac(int n, int at) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v[at] = 1.0;
  return v;
}

}  // namespace

TEST_SUITE("transport") {

TEST_CASE("cost table invariants") {
  auto mesh = square(0.1);
  const CostTable c = CostTable::from_mesh(*mesh);
  CHECK(c.size() == mesh->num_vertices());
  CHECK(c.checksum() == mesh->checksum());
  CHECK(c.matrix().diagonal().cwiseAbs().maxCoeff() == 0.0);
  CHECK((c.matrix() - c.matrix().transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.matrix().minCoeff() >= 0.0);
  // Convex domain: squared Euclidean distances.
  const int p = nearest_vertex(*mesh, {0, 0}), q = nearest_vertex(*mesh, {1, 1});
  CHECK(c.matrix()(p, q) == doctest::Approx(2.0).epsilon(1e-12));

  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(CostTable(bad, {0, 1}, "x"), ValidationError);
  bad.diagonal().setZero();
  bad(0, 1) = 2.0;
  CHECK_THROWS_AS(CostTable(bad, {0, 1}, "x"), ValidationError);
  CHECK_THROWS_AS(CostTable(Eigen::MatrixXd::Zero(2, 2), {0}, "x"), ValidationError);

  const Density rho = random_smooth_density(mesh, 2);
  CHECK(c.masses(rho).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(c.masses(Density::uniform(square(0.2))), ValidationError);
}

TEST_CASE("subsampled support") {
  auto mesh = square(0.05);
  const CostTable c = CostTable::from_mesh(*mesh, GeodesicMode::polygon, 100);
  CHECK(c.size() <= 100);
  const Eigen::VectorXd a = c.masses(random_smooth_density(mesh, 1));
  CHECK(a.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.minCoeff() > 0.0);
}

TEST_CASE("cost table cache") {
  auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.15));
  const auto dir = std::filesystem::temp_directory_path() / "fisherflow_cost_test";
  std::filesystem::remove_all(dir);
  const CostTable built = CostTable::cached(*mesh, dir);
  const auto file = dir / ("cost_" + mesh->checksum() + "_polygon.bin");
  REQUIRE(std::filesystem::exists(file));
  CHECK(std::filesystem::file_size(file) == 8 + 8 + 16 + 4 * built.size() + 8 * built.size() * built.size());
  const CostTable loaded = CostTable::load(file);
  CHECK(loaded.checksum() == mesh->checksum());
  CHECK(loaded.support() == built.support());
  CHECK((loaded.matrix() - built.matrix()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((CostTable::cached(*mesh, dir).matrix() - built.matrix()).cwiseAbs().maxCoeff() == 0.0);

  // Header bytes: magic then little-endian vertex count.
  std::ifstream is(file, std::ios::binary);
  char head[16];
  is.read(head, 16);
  CHECK(std::string(head, 8) == "FFCOST01");
  std::uint64_t count = 0;
  for (int k = 7; k >= 0; --k) count = (count << 8) | static_cast<unsigned char>(head[8 + k]);
  CHECK(count == static_cast<std::uint64_t>(built.size()));

  std::ofstream(dir / "junk.bin") << "not a cost table";
  CHECK_THROWS_AS(CostTable::load(dir / "junk.bin"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("configuration errors") {
  CHECK_THROWS_AS(config(0.0).validate(), ValidationError);
  SinkhornConfig cfg = config(0.01);
  cfg.tol = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  const CostTable c = CostTable::from_points({{0, 0}, {1, 0}});
  CHECK_THROWS_AS(sinkhorn(Eigen::Vector2d(0.5, 0.6), Eigen::Vector2d(0.5, 0.5), c.matrix(), 0.01, config(0.01)),
                  ValidationError);
  CHECK_THROWS_AS(sinkhorn(Eigen::Vector3d(0.5, 0.5, 0), Eigen::Vector2d(0.5, 0.5), c.matrix(), 0.01, config(0.01)),
                  ValidationError);
}

TEST_CASE("non-convergence reports the violation") {
  auto mesh = square(0.1);
  const CostTable c = CostTable::from_mesh(*mesh);
  SinkhornConfig cfg = config(1e-3);
  cfg.max_iters = 3;
  const Eigen::VectorXd a = c.masses(random_smooth_density(mesh, 1)), b = c.masses(random_smooth_density(mesh, 2));
  try {
    sinkhorn(a, b, c.matrix(), cfg.epsilon, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.residual() > cfg.tol);
  }
}

TEST_CASE("debiased distance vanishes on the diagonal") {
  for (auto mesh : {square(0.1), build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.12))}) {
    const CostTable c = CostTable::from_mesh(*mesh);
    const Density rho = random_smooth_density(mesh, 7);
    CHECK(wasserstein(rho, rho, c, config(0.01)) <= 1e-8);
  }
}

TEST_CASE("near-Dirac densities recover the geodesic distance") {
  SUBCASE("square corners") {
    auto mesh = square(0.05);
    const CostTable c = CostTable::from_mesh(*mesh);
    const int n = c.size(), p = nearest_vertex(*mesh, {0, 0}), q = nearest_vertex(*mesh, {1, 1});
    const double w = std::sqrt(sinkhorn_divergence(dirac(n, p), dirac(n, q), c.matrix(), 0.05 * 0.05, config(0.0025)));
    CHECK(std::abs(w - std::sqrt(2.0)) <= 0.02 * std::sqrt(2.0));
  }
  SUBCASE("across the star indentation") {
    auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.1));
    const CostTable c = CostTable::from_mesh(*mesh);
    const double th = std::numbers::pi / 3;
    const int p = nearest_vertex(*mesh, {0.45 * std::cos(th - 0.5), 0.45 * std::sin(th - 0.5)});
    const int q = nearest_vertex(*mesh, {0.45 * std::cos(th + 0.5), 0.45 * std::sin(th + 0.5)});
    const double chord = (mesh->vertices()[p] - mesh->vertices()[q]).norm();
    const double geo = std::sqrt(c.matrix()(p, q));
    const double w = std::sqrt(sinkhorn_divergence(dirac(c.size(), p), dirac(c.size(), q), c.matrix(), 0.01, config(0.01)));
    CHECK(std::abs(w - geo) <= 0.02 * geo);
    CHECK(w > chord);
  }
}

TEST_CASE("permutation brute force") {
  std::mt19937_64 gen(20240611);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5;
    std::vector<Vec2> x(n), y(n);
    for (auto& p : x) p = {U(gen), U(gen)};
    for (auto& p : y) p = {U(gen), U(gen)};
    std::vector<Vec2> all = x;
    all.insert(all.end(), y.begin(), y.end());
    const CostTable c = CostTable::from_points(all);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(2 * n), b = a;
    a.head(n).setConstant(1.0 / n);
    b.tail(n).setConstant(1.0 / n);
    const double exact = brute_force_w2(x, y);
    SinkhornConfig cfg = config(1e-3 * c.matrix().mean());
    // Near-permutation plans contract slowly at small eps; the problems are
    // tiny, and a 1e-6 marginal error moves the value far less than 1%.
    cfg.max_iters = 200000;
    cfg.tol = 1e-6;
    const double w2 = wasserstein2_extrapolated(a, b, c.matrix(), cfg);
    CHECK(std::abs(w2 - exact) <= 0.01 * exact);
  }
}

TEST_CASE("metric properties on random triples") {
  auto mesh = build_mesh(DomainSpec::polar_star(1, 0.5, 3, 0.12));
  const CostTable c = CostTable::from_mesh(*mesh);
  const SinkhornConfig cfg = config(0.02);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Density r1 = random_smooth_density(mesh, 3 * s + 1);
    const Density r2 = random_smooth_density(mesh, 3 * s + 2);
    const Density r3 = bump_density(mesh, concave_anchor(mesh->spec(), 0.2 + 0.1 * s), 0.2);
    const double d12 = wasserstein(r1, r2, c, cfg), d23 = wasserstein(r2, r3, c, cfg), d13 = wasserstein(r1, r3, c, cfg);
    CHECK(d13 <= 1.01 * (d12 + d23));
    CHECK(d12 == doctest::Approx(wasserstein(r2, r1, c, cfg)).epsilon(1e-6));
  }
}

TEST_CASE("entropic cost does not increase as epsilon shrinks") {
  auto mesh = square(0.1);
  const CostTable c = CostTable::from_mesh(*mesh);
  const Eigen::VectorXd a = c.masses(random_smooth_density(mesh, 4)), b = c.masses(random_smooth_density(mesh, 5));
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.08, 0.04, 0.02, 0.01}) {
    const double v = sinkhorn(a, b, c.matrix(), eps, config(eps)).value;
    CHECK(v <= prev + 1e-8);
    prev = v;
  }
}

TEST_CASE("metric speed") {
  auto mesh = square(0.05);
  const CostTable c = CostTable::from_mesh(*mesh);
  const SinkhornConfig cfg = config(0.005);
  HeatOperator op(mesh);
  const Density rho0 = eigenfunction_density(mesh);

  SUBCASE("constant curve") {
    Curve k;
    for (int i = 0; i < 3; ++i) {
      k.times.push_back(0.01 * i);
      k.densities.push_back(rho0);
    }
    CHECK(metric_speed(k, 1, c, cfg) <= 1e-6);
    CHECK_THROWS_AS(metric_speed(k, 0, c, cfg), ValidationError);
    CHECK_THROWS_AS(metric_speed(k, 2, c, cfg), ValidationError);
  }
  SUBCASE("heat flow speed is the root Fisher information") {
    const Curve h = op.evolve(rho0, 0.03, 1e-4, uniform_times(0.03, 2e-3));
    const int i = 10;  // t = 0.02
    REQUIRE(h.times[i] == doctest::Approx(0.02));
    const double speed = metric_speed(h, i, c, cfg);
    CHECK(std::abs(speed / std::sqrt(fisher(h.densities[i])) - 1.0) <= 0.10);

    Curve shifted = h;
    shifted.times.insert(shifted.times.begin(), -2e-3);
    shifted.densities.insert(shifted.densities.begin(), rho0);
    shifted.momenta.reset();
    CHECK(metric_speed(shifted, i + 1, c, cfg) == doctest::Approx(speed).epsilon(1e-9));
  }
}

}
