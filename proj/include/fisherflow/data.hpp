#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "fisherflow/functionals.hpp"

namespace fisherflow {

/// Portable seeded generator: the bit stream of mt19937_64 is fixed by the
/// standard, and the conversions below avoid the implementation-defined
/// std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// 1 + amp cos(p pi u) cos(q pi v) on the bounding-box coordinates
/// u = (x - xmin) / Lx, v = (y - ymin) / Ly; normalized. On the unit square
/// with amp = 1/2 this is the Neumann eigenfunction datum.
Density eigenfunction_density(MeshPtr mesh, double amp = 0.5, int p = 1, int q = 1);

/// Normalized exp(-|x - x0|^2 / sigma^2).
Density bump_density(MeshPtr mesh, const Vec2& x0, double sigma);

/// The boundary point of largest concavity, moved inward along the ray to
/// the origin by `offset`. For rectangles, the domain centre.
Vec2 concave_anchor(const DomainSpec& spec, double offset);

/// Low-pass random cosine series g, rho = max(1 + 0.7 g / max|g|, 0.05),
/// normalized. Deterministic in `seed`.
Density random_smooth_density(MeshPtr mesh, std::uint64_t seed, int modes = 4);

/// Random smooth nodal function: cubic polynomial plus cosine products in
/// bounding-box coordinates, deterministic in `seed`.
Eigen::VectorXd random_test_function(const TriMesh& mesh, std::uint64_t seed);

/// Nodal mean of the squared triangle gradients over the triangles adjacent
/// to each vertex (area weighted).
Eigen::VectorXd nodal_squared_gradient(const TriMesh& mesh, const Eigen::VectorXd& f);

}  // namespace fisherflow
