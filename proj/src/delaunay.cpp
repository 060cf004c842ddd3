#include "delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "fisherflow/errors.hpp"

namespace fisherflow::detail {

double orient2d(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

namespace {

// > 0 when d lies strictly inside the circumcircle of ccw triangle abc.
long double incircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const long double adx = a.x() - d.x(), ady = a.y() - d.y();
  const long double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const long double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const long double alift = adx * adx + ady * ady;
  const long double blift = bdx * bdx + bdy * bdy;
  const long double clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) +
         clift * (adx * bdy - bdx * ady);
}

struct Cell {
  std::array<int, 3> v;
  std::array<int, 3> nbr;  // nbr[i] is across the edge opposite v[i]
  bool alive = true;
};

class Triangulator {
 public:
  explicit Triangulator(const std::vector<Vec2>& input) : pts_(input) {
    Vec2 lo = pts_.front(), hi = pts_.front();
    for (const auto& p : pts_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Vec2 c = 0.5 * (lo + hi);
    const double span = std::max((hi - lo).maxCoeff(), 1e-12);
    n_input_ = static_cast<int>(pts_.size());
    pts_.push_back(c + Vec2(-40.0 * span, -30.0 * span));
    pts_.push_back(c + Vec2(40.0 * span, -30.0 * span));
    pts_.push_back(c + Vec2(0.0, 40.0 * span));
    cells_.push_back({{n_input_, n_input_ + 1, n_input_ + 2}, {-1, -1, -1}, true});
  }

  void insert(int p) {
    const int start = locate(pts_[p]);
    // Cavity: connected set of cells whose circumcircle contains p.
    std::unordered_set<int> cavity{start};
    std::vector<int> stack{start};
    while (!stack.empty()) {
      const int t = stack.back();
      stack.pop_back();
      for (int i = 0; i < 3; ++i) {
        const int n = cells_[t].nbr[i];
        if (n < 0 || cavity.contains(n)) continue;
        const auto& c = cells_[n];
        const bool on_edge = t == start && orient2d(pts_[cells_[t].v[(i + 1) % 3]], pts_[cells_[t].v[(i + 2) % 3]],
                                                    pts_[p]) <= 0.0;
        if (on_edge || incircle(pts_[c.v[0]], pts_[c.v[1]], pts_[c.v[2]], pts_[p]) > 0) {
          cavity.insert(n);
          stack.push_back(n);
        }
      }
    }
    struct Edge {
      int a, b, outside, owner;
    };
    std::vector<Edge> rim;
    // Round-off on nearly cocircular points can make the cavity non
    // star-shaped; shrink it until every rim edge is visible from p.
    for (;;) {
      rim.clear();
      for (int t : cavity) {
        for (int i = 0; i < 3; ++i) {
          const int n = cells_[t].nbr[i];
          if (n >= 0 && cavity.contains(n)) continue;
          rim.push_back({cells_[t].v[(i + 1) % 3], cells_[t].v[(i + 2) % 3], n, t});
        }
      }
      std::vector<int> drop;
      for (const auto& e : rim) {
        if (e.owner != start && orient2d(pts_[e.a], pts_[e.b], pts_[p]) <= 0.0) drop.push_back(e.owner);
      }
      if (drop.empty()) break;
      for (int t : drop) cavity.erase(t);
      // Keep only the part still connected to the containing cell.
      std::unordered_set<int> connected{start};
      stack.assign(1, start);
      while (!stack.empty()) {
        const int t = stack.back();
        stack.pop_back();
        for (int n : cells_[t].nbr) {
          if (n >= 0 && cavity.contains(n) && !connected.contains(n)) {
            connected.insert(n);
            stack.push_back(n);
          }
        }
      }
      cavity = std::move(connected);
    }
    for (int t : cavity) cells_[t].alive = false;
    // Sort rim for deterministic output independent of hash order.
    std::sort(rim.begin(), rim.end(), [](const Edge& x, const Edge& y) {
      return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    std::unordered_map<int, int> by_start, by_end;
    std::vector<int> created;
    created.reserve(rim.size());
    for (const auto& e : rim) {
      const int id = static_cast<int>(cells_.size());
      // Triangle (a, b, p) is ccw because p sees edge ab from the inside.
      cells_.push_back({{e.a, e.b, p}, {-1, -1, e.outside}, true});
      if (e.outside >= 0) {
        auto& o = cells_[e.outside];
        for (int j = 0; j < 3; ++j) {
          if (o.v[(j + 1) % 3] == e.b && o.v[(j + 2) % 3] == e.a) o.nbr[j] = id;
        }
      }
      by_start[e.a] = id;
      by_end[e.b] = id;
      created.push_back(id);
    }
    for (int id : created) {
      auto& c = cells_[id];
      // nbr[0] is across edge (b, p): the fan cell starting at b.
      c.nbr[0] = by_start.at(c.v[1]);
      // nbr[1] is across edge (p, a): the fan cell ending at a.
      c.nbr[1] = by_end.at(c.v[0]);
    }
    last_ = created.back();
#ifdef FISHERFLOW_DELAUNAY_DEBUG
    for (std::size_t id = 0; id < cells_.size(); ++id) {
      const auto& c = cells_[id];
      if (!c.alive) continue;
      if (orient2d(pts_[c.v[0]], pts_[c.v[1]], pts_[c.v[2]]) <= 0) throw MeshError("debug: inverted cell after inserting " + std::to_string(p));
      for (int i = 0; i < 3; ++i) {
        const int n = c.nbr[i];
        if (n < 0) continue;
        if (!cells_[n].alive) throw MeshError("debug: dead neighbour after inserting " + std::to_string(p));
        bool back = false;
        for (int j = 0; j < 3; ++j) back |= cells_[n].nbr[j] == static_cast<int>(id);
        if (!back) throw MeshError("debug: asymmetric adjacency after inserting " + std::to_string(p));
      }
    }
#endif
  }

  std::vector<Triangle> finish() const {
    std::vector<Triangle> out;
    for (const auto& c : cells_) {
      if (!c.alive) continue;
      if (c.v[0] >= n_input_ || c.v[1] >= n_input_ || c.v[2] >= n_input_) continue;
      out.push_back({c.v[0], c.v[1], c.v[2]});
    }
    return out;
  }

 private:
  int locate(const Vec2& p) {
    int t = last_;
    while (!cells_[t].alive) --t;
    for (std::size_t guard = 0; guard < 4 * cells_.size() + 16; ++guard) {
      const auto& c = cells_[t];
      bool moved = false;
      for (int k = 0; k < 3; ++k) {
        const int i = (k + static_cast<int>(guard)) % 3;
        const Vec2& a = pts_[c.v[(i + 1) % 3]];
        const Vec2& b = pts_[c.v[(i + 2) % 3]];
        if (orient2d(a, b, p) < -1e-13 * (b - a).squaredNorm() && c.nbr[i] >= 0) {
          t = c.nbr[i];
          moved = true;
          break;
        }
      }
      if (!moved) return t;
    }
    // Walk failed to terminate (round-off on degenerate input); take the
    // cell where p is least outside.
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int i = static_cast<int>(cells_.size()) - 1; i >= 0; --i) {
      const auto& c = cells_[i];
      if (!c.alive) continue;
      const double score = std::min({orient2d(pts_[c.v[0]], pts_[c.v[1]], p), orient2d(pts_[c.v[1]], pts_[c.v[2]], p),
                                     orient2d(pts_[c.v[2]], pts_[c.v[0]], p)});
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
#ifdef FISHERFLOW_DELAUNAY_DEBUG
    std::fprintf(stderr, "fallback locate (%g, %g) score %g\n", p.x(), p.y(), best_score);
#endif
    if (best >= 0) return best;
    throw MeshError("delaunay: point location failed");
  }

  std::vector<Vec2> pts_;
  std::vector<Cell> cells_;
  int n_input_ = 0;
  int last_ = 0;
};

}  // namespace

std::vector<Triangle> delaunay_triangulate(const std::vector<Vec2>& points) {
  if (points.size() < 3) throw MeshError("delaunay: need at least three points");
  // Insert in a snake order over horizontal strips so that point location
  // walks stay short.
  Vec2 lo = points.front(), hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double strip = std::max((hi - lo).maxCoeff() / std::sqrt(static_cast<double>(points.size())), 1e-12) * 2.0;
  std::vector<int> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  auto key_row = [&](int i) { return static_cast<long>(std::floor((points[i].y() - lo.y()) / strip)); };
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    const long ri = key_row(i), rj = key_row(j);
    if (ri != rj) return ri < rj;
    const bool forward = (ri % 2) == 0;
    if (points[i].x() != points[j].x()) return forward ? points[i].x() < points[j].x() : points[i].x() > points[j].x();
    return i < j;
  });

  Triangulator tri(points);
  for (int i : order) tri.insert(i);
  return tri.finish();
}

}  // namespace fisherflow::detail
