#pragma once

#include <vector>

#include "fisherflow/mesh.hpp"

namespace fisherflow::detail {

/// Incremental Bowyer-Watson Delaunay triangulation of a point set.
/// Returns counter-clockwise triangles over indices into `points`.
std::vector<Triangle> delaunay_triangulate(const std::vector<Vec2>& points);

double orient2d(const Vec2& a, const Vec2& b, const Vec2& c);

}  // namespace fisherflow::detail
