#include "fisherflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <queue>
#include <set>

#include "delaunay.hpp"
#include "fisherflow/errors.hpp"

namespace fisherflow {

using std::numbers::pi;

// ---------------------------------------------------------------------------
// DomainSpec

DomainSpec DomainSpec::rectangle(double width, double height, double h) {
  DomainSpec s;
  s.kind = Kind::rectangle;
  s.width = width;
  s.height = height;
  s.h = h;
  return s;
}

DomainSpec DomainSpec::polar_star(double r0, double a, int k, double h) {
  DomainSpec s;
  s.kind = Kind::polar_star;
  s.r0 = r0;
  s.a = a;
  s.k = k;
  s.h = h;
  return s;
}

double DomainSpec::feature_size() const {
  if (kind == Kind::rectangle) return 0.5 * std::min(width, height);
  return 0.5 * (r0 - a);
}

void DomainSpec::validate() const {
  if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("domain: target edge length h must be positive");
  if (kind == Kind::rectangle) {
    if (!(width > 0.0) || !(height > 0.0)) throw ValidationError("domain: rectangle sides must be positive");
  } else {
    if (!(r0 > 0.0)) throw ValidationError("domain: r0 must be positive");
    if (a < 0.0) throw ValidationError("domain: amplitude a must be nonnegative");
    if (a >= r0) throw ValidationError("domain: polar star needs a < r0 so that r(theta) > 0");
    if (k < 2) throw ValidationError("domain: frequency k must be an integer >= 2");
  }
  if (h >= feature_size()) {
    throw ValidationError("domain: h = " + std::to_string(h) + " exceeds the minimum feature size " +
                          std::to_string(feature_size()));
  }
}

bool DomainSpec::is_convex() const {
  if (kind == Kind::rectangle) return true;
  return boundary_curvature(*this, 4096).S <= 1e-9;
}

double DomainSpec::radius(double theta) const { return r0 + a * std::cos(k * theta); }
double DomainSpec::radius_d1(double theta) const { return -a * k * std::sin(k * theta); }
double DomainSpec::radius_d2(double theta) const { return -a * k * k * std::cos(k * theta); }

Vec2 DomainSpec::boundary_point(double theta) const {
  const double r = radius(theta);
  return {r * std::cos(theta), r * std::sin(theta)};
}

bool DomainSpec::contains(const Vec2& p, double tol) const {
  if (kind == Kind::rectangle) {
    return p.x() >= -tol && p.x() <= width + tol && p.y() >= -tol && p.y() <= height + tol;
  }
  return p.norm() <= radius(std::atan2(p.y(), p.x())) + tol;
}

double DomainSpec::exact_area() const {
  if (kind == Kind::rectangle) return width * height;
  // 1/2 int_0^{2 pi} (r0 + a cos k theta)^2 dtheta
  return pi * (r0 * r0 + 0.5 * a * a);
}

nlohmann::json DomainSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = kind == Kind::rectangle ? "rectangle" : "polar_star";
  if (kind == Kind::rectangle) {
    j["width"] = width;
    j["height"] = height;
  } else {
    j["r0"] = r0;
    j["a"] = a;
    j["k"] = k;
  }
  j["h"] = h;
  return j;
}

DomainSpec DomainSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("domain spec: expected a JSON object");
  DomainSpec s;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "rectangle") {
      s.kind = Kind::rectangle;
      s.width = j.value("width", 1.0);
      s.height = j.value("height", 1.0);
    } else if (kind == "polar_star") {
      s.kind = Kind::polar_star;
      s.r0 = j.value("r0", 1.0);
      s.a = j.value("a", 0.0);
      const double kk = j.value("k", 3.0);
      if (kk != std::floor(kk)) throw ValidationError("domain spec: k must be an integer");
      s.k = static_cast<int>(kk);
    } else {
      throw ValidationError("domain spec: unknown kind '" + kind + "'");
    }
    s.h = j.at("h").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("domain spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// TriMesh

namespace {

std::string fnv1a_checksum(const std::vector<Vec2>& vertices, const std::vector<Triangle>& triangles) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& v : vertices) {
    const double xy[2] = {v.x(), v.y()};
    mix(xy, sizeof xy);
  }
  for (const auto& t : triangles) {
    const std::int32_t idx[3] = {t[0], t[1], t[2]};
    mix(idx, sizeof idx);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::vector<int> boundary_loop_from_triangles(const std::vector<Triangle>& triangles) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : triangles) {
    for (int i = 0; i < 3; ++i) directed[{t[i], t[(i + 1) % 3]}] += 1;
  }
  std::map<int, int> next;
  for (const auto& [e, count] : directed) {
    if (!directed.contains({e.second, e.first})) next[e.first] = e.second;
  }
  if (next.empty()) return {};
  std::vector<int> loop;
  const int start = next.begin()->first;
  int v = start;
  do {
    loop.push_back(v);
    auto it = next.find(v);
    if (it == next.end()) throw MeshError("mesh: open boundary chain");
    v = it->second;
    if (loop.size() > next.size()) throw MeshError("mesh: boundary is not a single loop");
  } while (v != start);
  if (loop.size() != next.size()) throw MeshError("mesh: boundary has more than one component");
  return loop;
}

}  // namespace

TriMesh::TriMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles, std::vector<int> boundary_loop,
                 DomainSpec spec)
    : vertices_(std::move(vertices)),
      triangles_(std::move(triangles)),
      boundary_loop_(std::move(boundary_loop)),
      spec_(spec) {
  if (boundary_loop_.empty()) boundary_loop_ = boundary_loop_from_triangles(triangles_);
  const int n = num_vertices();
  areas_.resize(triangles_.size());
  grads_.resize(triangles_.size());
  lumped_mass_ = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * triangles_.size());
  long double area_sum = 0.0L;
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& tri = triangles_[t];
    for (int v : tri) {
      if (v < 0 || v >= n) throw MeshError("mesh: triangle references a missing vertex");
    }
    const Vec2& p0 = vertices_[tri[0]];
    const Vec2& p1 = vertices_[tri[1]];
    const Vec2& p2 = vertices_[tri[2]];
    const double twice = detail::orient2d(p0, p1, p2);
    if (!(twice > 0.0)) throw MeshError("mesh: triangle " + std::to_string(t) + " has nonpositive signed area");
    const double area = 0.5 * twice;
    areas_[t] = area;
    area_sum += area;
    // grad lambda_i = rot90(opposite edge) / (2 area)
    const std::array<Vec2, 3> p{p0, p1, p2};
    for (int i = 0; i < 3; ++i) {
      const Vec2 e = p[(i + 2) % 3] - p[(i + 1) % 3];
      grads_[t][i] = Vec2(-e.y(), e.x()) / twice;
    }
    for (int i = 0; i < 3; ++i) {
      lumped_mass_[tri[i]] += area / 3.0;
      for (int j = 0; j < 3; ++j) trip.emplace_back(tri[i], tri[j], area * grads_[t][i].dot(grads_[t][j]));
    }
  }
  area_total_ = static_cast<double>(area_sum);
  stiffness_.resize(n, n);
  stiffness_.setFromTriplets(trip.begin(), trip.end());
  stiffness_.makeCompressed();
  for (int k = 0; k < stiffness_.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(stiffness_, k); it; ++it) {
      if (it.row() != it.col() && it.value() > 1e-12 * std::abs(stiffness_.coeff(k, k))) m_matrix_ = false;
    }
  }
  checksum_ = fnv1a_checksum(vertices_, triangles_);
}

Vec2 TriMesh::centroid(int t) const {
  const auto& tri = triangles_[t];
  return (vertices_[tri[0]] + vertices_[tri[1]] + vertices_[tri[2]]) / 3.0;
}

Vec2 TriMesh::gradient(int t, std::span<const double> nodal) const {
  const auto& tri = triangles_[t];
  return nodal[tri[0]] * grads_[t][0] + nodal[tri[1]] * grads_[t][1] + nodal[tri[2]] * grads_[t][2];
}

Vec2 TriMesh::gradient(int t, const Eigen::VectorXd& nodal) const {
  return gradient(t, std::span<const double>(nodal.data(), static_cast<std::size_t>(nodal.size())));
}

double TriMesh::max_edge_length() const {
  double m = 0.0;
  for (const auto& t : triangles_) {
    for (int i = 0; i < 3; ++i) m = std::max(m, (vertices_[t[i]] - vertices_[t[(i + 1) % 3]]).norm());
  }
  return m;
}

double TriMesh::min_angle() const {
  double m = pi;
  for (const auto& t : triangles_) {
    for (int i = 0; i < 3; ++i) {
      const Vec2 u = vertices_[t[(i + 1) % 3]] - vertices_[t[i]];
      const Vec2 v = vertices_[t[(i + 2) % 3]] - vertices_[t[i]];
      m = std::min(m, std::acos(std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0)));
    }
  }
  return m;
}

void TriMesh::check_invariants() const {
  long double mass = 0.0L;
  for (Eigen::Index i = 0; i < lumped_mass_.size(); ++i) mass += lumped_mass_[i];
  if (std::abs(mass - area_total_) > 1e-12 * area_total_) throw MeshError("mesh: lumped mass does not sum to area");
  if (lumped_mass_.minCoeff() <= 0.0) throw MeshError("mesh: isolated vertex with zero lumped mass");
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(num_vertices());
  const double row = (stiffness_ * ones).cwiseAbs().maxCoeff();
  if (row > 1e-10) throw MeshError("mesh: stiffness rows do not sum to zero");
}

nlohmann::json TriMesh::to_json() const {
  nlohmann::json j;
  j["checksum"] = checksum_;
  j["spec"] = spec_.to_json();
  auto& vs = j["vertices"] = nlohmann::json::array();
  for (const auto& v : vertices_) vs.push_back({v.x(), v.y()});
  auto& ts = j["triangles"] = nlohmann::json::array();
  for (const auto& t : triangles_) ts.push_back({t[0], t[1], t[2]});
  j["boundary_loop"] = boundary_loop_;
  j["area_total"] = area_total_;
  j["m_matrix"] = m_matrix_;
  return j;
}

nlohmann::json CurvatureBound::to_json() const {
  return {{"S", S}, {"K", K}, {"kappa_min", kappa_min}, {"theta_at_min", theta_at_min}};
}

// ---------------------------------------------------------------------------
// Mesh generation

namespace {

MeshPtr build_rectangle(const DomainSpec& spec) {
  const int nx = static_cast<int>(std::ceil(spec.width / spec.h - 1e-9));
  const int ny = static_cast<int>(std::ceil(spec.height / spec.h - 1e-9));
  const double dx = spec.width / nx;
  const double dy = spec.height / ny;
  std::vector<Vec2> vertices;
  vertices.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) vertices.emplace_back(i * dx, j * dy);
  }
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  std::vector<Triangle> triangles;
  triangles.reserve(static_cast<std::size_t>(2 * nx * ny));
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  std::vector<int> loop;
  for (int i = 0; i < nx; ++i) loop.push_back(id(i, 0));
  for (int j = 0; j < ny; ++j) loop.push_back(id(nx, j));
  for (int i = nx; i > 0; --i) loop.push_back(id(i, ny));
  for (int j = ny; j > 0; --j) loop.push_back(id(0, j));
  return std::make_shared<const TriMesh>(std::move(vertices), std::move(triangles), std::move(loop), spec);
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double s = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + s * ab)).norm();
}

bool inside_polygon(const std::vector<Vec2>& poly, const Vec2& p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

// Boundary parameters equidistributed in arc length.
std::vector<double> arc_length_parameters(const DomainSpec& spec, int count) {
  const int dense = 64 * std::max(count, 256);
  std::vector<double> s(dense + 1, 0.0);
  Vec2 prev = spec.boundary_point(0.0);
  for (int i = 1; i <= dense; ++i) {
    const Vec2 cur = spec.boundary_point(2.0 * pi * i / dense);
    s[i] = s[i - 1] + (cur - prev).norm();
    prev = cur;
  }
  std::vector<double> theta(count);
  for (int m = 0; m < count; ++m) {
    const double target = s.back() * m / count;
    const auto it = std::lower_bound(s.begin(), s.end(), target);
    const int hi = std::max(1, static_cast<int>(it - s.begin()));
    const double w = (target - s[hi - 1]) / (s[hi] - s[hi - 1]);
    theta[m] = 2.0 * pi * (hi - 1 + w) / dense;
  }
  return theta;
}

double polar_arc_length(const DomainSpec& spec) {
  const int dense = 200000;
  double length = 0.0;
  Vec2 prev = spec.boundary_point(0.0);
  for (int i = 1; i <= dense; ++i) {
    const Vec2 cur = spec.boundary_point(2.0 * pi * i / dense);
    length += (cur - prev).norm();
    prev = cur;
  }
  return length;
}

MeshPtr build_polar_star(const DomainSpec& spec) {
  const double h = spec.h;
  const int n_boundary = static_cast<int>(std::ceil(polar_arc_length(spec) / (0.8 * h)));
  std::vector<double> theta = arc_length_parameters(spec, n_boundary);

  // Interior lattice is fixed; only the boundary gets refined when a boundary
  // segment is missing from the Delaunay triangulation.
  const double spacing = 0.85 * h;
  const double row = spacing * std::sqrt(3.0) / 2.0;
  const double extent = spec.r0 + spec.a + h;
  std::vector<Vec2> lattice;
  const int nrow = static_cast<int>(std::ceil(extent / row));
  const int ncol = static_cast<int>(std::ceil(extent / spacing));
  for (int j = -nrow; j <= nrow; ++j) {
    const double shift = (std::abs(j) % 2) ? 0.5 * spacing : 0.0;
    for (int i = -ncol - 1; i <= ncol; ++i) {
      const Vec2 p(i * spacing + shift, j * row);
      if (spec.contains(p, -0.3 * h)) lattice.push_back(p);
    }
  }

  for (int attempt = 0; attempt < 12; ++attempt) {
    std::vector<Vec2> boundary;
    boundary.reserve(theta.size());
    for (double t : theta) boundary.push_back(spec.boundary_point(t));
    const int nb = static_cast<int>(boundary.size());

    std::vector<Vec2> points = boundary;
    for (const auto& p : lattice) {
      if (!inside_polygon(boundary, p)) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (int i = 0; i < nb; ++i) {
        const Vec2& a = boundary[i];
        const Vec2& b = boundary[(i + 1) % nb];
        dmin = std::min(dmin, segment_distance(p, a, b));
        // Keep the point out of every boundary segment's diametral disk.
        if ((p - 0.5 * (a + b)).norm() < 0.55 * (b - a).norm()) dmin = 0.0;
      }
      if (dmin >= 0.5 * spacing) points.push_back(p);
    }

    const auto all = detail::delaunay_triangulate(points);
    std::vector<Triangle> kept;
    for (const auto& t : all) {
      const Vec2 c = (points[t[0]] + points[t[1]] + points[t[2]]) / 3.0;
      if (inside_polygon(boundary, c)) kept.push_back(t);
    }
    std::set<std::pair<int, int>> edges;
    for (const auto& t : kept) {
      for (int i = 0; i < 3; ++i) edges.insert({t[i], t[(i + 1) % 3]});
    }
    std::vector<double> refined;
    bool conforming = true;
    for (int i = 0; i < nb; ++i) {
      refined.push_back(theta[i]);
      if (!edges.contains({i, (i + 1) % nb})) {
        conforming = false;
        const double t1 = (i + 1 < nb) ? theta[i + 1] : theta[0] + 2.0 * pi;
        refined.push_back(0.5 * (theta[i] + t1));
      }
    }
    if (!conforming) {
      theta = std::move(refined);
      continue;
    }

    // Compact away unused points and orient.
    std::vector<int> remap(points.size(), -1);
    std::vector<Vec2> vertices;
    for (int i = 0; i < nb; ++i) {
      remap[i] = static_cast<int>(vertices.size());
      vertices.push_back(points[i]);
    }
    for (const auto& t : kept) {
      for (int v : t) {
        if (remap[v] < 0) {
          remap[v] = static_cast<int>(vertices.size());
          vertices.push_back(points[v]);
        }
      }
    }
    std::vector<Triangle> triangles;
    triangles.reserve(kept.size());
    for (const auto& t : kept) triangles.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    std::vector<int> loop(nb);
    for (int i = 0; i < nb; ++i) loop[i] = i;
    auto mesh = std::make_shared<const TriMesh>(std::move(vertices), std::move(triangles), std::move(loop), spec);
    return mesh;
  }
  throw MeshError("mesh: boundary recovery did not converge after 12 refinement passes");
}

}  // namespace

MeshPtr build_mesh(const DomainSpec& spec) {
  spec.validate();
  MeshPtr mesh = spec.kind == DomainSpec::Kind::rectangle ? build_rectangle(spec) : build_polar_star(spec);
  mesh->check_invariants();
  if (!mesh->m_matrix()) {
    std::cerr << "warning: mesh stiffness is not an M-matrix; positivity will be checked empirically\n";
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Curvature

double polar_curvature(const DomainSpec& spec, double theta) {
  const double r = spec.radius(theta);
  const double r1 = spec.radius_d1(theta);
  const double r2 = spec.radius_d2(theta);
  return (r * r + 2.0 * r1 * r1 - r * r2) / std::pow(r * r + r1 * r1, 1.5);
}

CurvatureBound boundary_curvature(const DomainSpec& spec, int n_samples) {
  spec.validate();
  CurvatureBound cb;
  if (spec.kind == DomainSpec::Kind::rectangle) return cb;  // straight convex edges
  if (n_samples < 1024) throw ValidationError("curvature: need at least 1024 samples");
  const double dt = 2.0 * pi / n_samples;
  int imin = 0;
  double kmin = polar_curvature(spec, 0.0);
  for (int i = 1; i < n_samples; ++i) {
    const double kv = polar_curvature(spec, i * dt);
    if (kv < kmin - 1e-12 * std::abs(kmin)) {
      kmin = kv;
      imin = i;
    }
  }
  // Three-point parabolic refinement around the sampled minimum.
  const double km = polar_curvature(spec, (imin - 1) * dt);
  const double kp = polar_curvature(spec, (imin + 1) * dt);
  const double denom = km - 2.0 * kmin + kp;
  double offset = 0.0;
  if (denom > 0.0) offset = std::clamp(0.5 * (km - kp) / denom, -1.0, 1.0);
  double theta = (imin + offset) * dt;
  double kappa = kmin - 0.25 * (km - kp) * offset;
  // The family is invariant under rotation by 2 pi / k; report the first
  // equivalent angle.
  const double period = 2.0 * pi / spec.k;
  theta = std::fmod(std::fmod(theta, period) + period, period);
  cb.kappa_min = kappa;
  cb.theta_at_min = theta;
  cb.S = std::max(0.0, -kappa);
  cb.K = 0.0;
  return cb;
}

// ---------------------------------------------------------------------------
// Geodesics

Eigen::MatrixXd geodesic_distances(const TriMesh& mesh, std::span<const int> sources) {
  const int n = mesh.num_vertices();
  const auto& V = mesh.vertices();
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  std::map<std::pair<int, int>, std::vector<int>> opposite;  // undirected edge -> opposite vertices
  for (const auto& t : mesh.triangles()) {
    for (int i = 0; i < 3; ++i) {
      const int a = t[i], b = t[(i + 1) % 3], c = t[(i + 2) % 3];
      opposite[{std::min(a, b), std::max(a, b)}].push_back(c);
    }
  }
  auto add = [&](int a, int b) {
    const double w = (V[a] - V[b]).norm();
    adj[a].emplace_back(b, w);
    adj[b].emplace_back(a, w);
  };
  for (const auto& [e, opp] : opposite) {
    add(e.first, e.second);
    if (opp.size() == 2) {
      const int c = opp[0], d = opp[1];
      // Only if the quad is convex, so the diagonal stays inside both triangles.
      const double s1 = detail::orient2d(V[c], V[d], V[e.first]);
      const double s2 = detail::orient2d(V[c], V[d], V[e.second]);
      if (s1 * s2 < 0.0) add(c, d);
    }
  }
  Eigen::MatrixXd dist(static_cast<Eigen::Index>(sources.size()), n);
  using Item = std::pair<double, int>;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const int src = sources[s];
    if (src < 0 || src >= n) throw ValidationError("geodesic: source index out of range");
    std::vector<double> d(n, std::numeric_limits<double>::infinity());
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    d[src] = 0.0;
    pq.emplace(0.0, src);
    while (!pq.empty()) {
      const auto [du, u] = pq.top();
      pq.pop();
      if (du > d[u]) continue;
      for (const auto& [v, w] : adj[u]) {
        if (du + w < d[v]) {
          d[v] = du + w;
          pq.emplace(d[v], v);
        }
      }
    }
    for (int v = 0; v < n; ++v) {
      if (!std::isfinite(d[v])) throw MeshError("geodesic: mesh is disconnected");
      dist(static_cast<Eigen::Index>(s), v) = d[v];
    }
  }
  return dist;
}

namespace {

// Visibility inside the boundary polygon. Only edges off the convex hull can
// block a segment whose endpoints lie in the closed polygon.
class PolygonVisibility {
 public:
  explicit PolygonVisibility(const TriMesh& mesh) {
    for (int v : mesh.boundary_loop()) poly_.push_back(mesh.vertices()[v]);
    const std::size_t nb = poly_.size();
    Vec2 lo = poly_.front(), hi = poly_.front();
    for (const auto& p : poly_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    scale_ = (hi - lo).squaredNorm();
    for (std::size_t i = 0; i < nb; ++i) {
      const Vec2& a = poly_[i];
      const Vec2& b = poly_[(i + 1) % nb];
      bool hull = true;
      for (const auto& q : poly_) {
        if (detail::orient2d(a, b, q) < -1e-12 * scale_) {
          hull = false;
          break;
        }
      }
      if (!hull) pocket_.push_back({a, b});
      const Vec2& prev = poly_[(i + nb - 1) % nb];
      if (detail::orient2d(prev, a, b) < -1e-14 * scale_) reflex_.push_back(a);
    }
    if (!pocket_.empty()) build(0, static_cast<int>(pocket_.size()));
  }

  const std::vector<Vec2>& reflex() const { return reflex_; }

  bool inside_or_on(const Vec2& x) const {
    if (inside_polygon(poly_, x)) return true;
    const double tol = 1e-9 * std::sqrt(scale_);
    for (std::size_t i = 0; i < poly_.size(); ++i) {
      if (segment_distance(x, poly_[i], poly_[(i + 1) % poly_.size()]) <= tol) return true;
    }
    return false;
  }

  // `on_boundary` tells whether either endpoint is a boundary vertex.
  bool visible(const Vec2& p, const Vec2& q, bool on_boundary) const {
    if (pocket_.empty() || p == q) return true;
    const Vec2 lo = p.cwiseMin(q), hi = p.cwiseMax(q);
    bool grazing = false;
    if (crosses(0, p, q, lo, hi, grazing)) return false;
    if (!grazing) {
      // No crossing and no contact: the segment interior is entirely inside or
      // entirely outside, and only a chord between boundary points can be
      // outside.
      return !on_boundary || inside_or_on(0.5 * (p + q));
    }
    for (int s = 1; s < 8; ++s) {
      if (!inside_or_on(p + (q - p) * (s / 8.0))) return false;
    }
    return true;
  }

 private:
  // Bounding-box tree over contiguous runs of pocket edges (they follow the
  // boundary, so runs are spatially compact).
  struct Node {
    Vec2 lo, hi;
    int begin, end, left = -1, right = -1;
  };

  int build(int begin, int end) {
    Node node{pocket_[begin].first, pocket_[begin].first, begin, end};
    for (int e = begin; e < end; ++e) {
      for (const Vec2& v : {pocket_[e].first, pocket_[e].second}) {
        node.lo = node.lo.cwiseMin(v);
        node.hi = node.hi.cwiseMax(v);
      }
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin > 4) {
      const int mid = (begin + end) / 2;
      const int l = build(begin, mid);
      const int r = build(mid, end);
      nodes_[id].left = l;
      nodes_[id].right = r;
    }
    return id;
  }

  // True if pq properly crosses a pocket edge under node `id`; records
  // contact with an edge endpoint in `grazing`.
  bool crosses(int id, const Vec2& p, const Vec2& q, const Vec2& lo, const Vec2& hi, bool& grazing) const {
    const Node& n = nodes_[id];
    if (n.hi.x() < lo.x() || n.lo.x() > hi.x() || n.hi.y() < lo.y() || n.lo.y() > hi.y()) return false;
    const double tol = 1e-12 * scale_;
    // Skip boxes strictly on one side of the segment's line.
    double omin = std::numeric_limits<double>::infinity(), omax = -omin;
    for (const Vec2& c : {n.lo, n.hi, Vec2(n.lo.x(), n.hi.y()), Vec2(n.hi.x(), n.lo.y())}) {
      const double o = detail::orient2d(p, q, c);
      omin = std::min(omin, o);
      omax = std::max(omax, o);
    }
    if (omin > tol || omax < -tol) return false;
    if (n.left >= 0) return crosses(n.left, p, q, lo, hi, grazing) || crosses(n.right, p, q, lo, hi, grazing);
    const Vec2 d = q - p;
    for (int e = n.begin; e < n.end; ++e) {
      const auto& [a, b] = pocket_[e];
      const double o1 = detail::orient2d(p, q, a), o2 = detail::orient2d(p, q, b);
      const double o3 = detail::orient2d(a, b, p), o4 = detail::orient2d(a, b, q);
      if (((o1 > tol && o2 < -tol) || (o1 < -tol && o2 > tol)) && ((o3 > tol && o4 < -tol) || (o3 < -tol && o4 > tol))) {
        return true;
      }
      if (!grazing) {
        for (const auto& [w, o] : {std::pair<const Vec2&, double>{a, o1}, {b, o2}}) {
          if (std::abs(o) > tol) continue;
          const double t = (w - p).dot(d) / d.squaredNorm();
          if (t > -1e-12 && t < 1.0 + 1e-12) grazing = true;
        }
      }
    }
    return false;
  }

  std::vector<Vec2> poly_;
  std::vector<Node> nodes_;
  std::vector<std::pair<Vec2, Vec2>> pocket_;
  std::vector<Vec2> reflex_;
  double scale_ = 1.0;
};

}  // namespace

Eigen::MatrixXd polygon_geodesic_distances(const TriMesh& mesh, std::span<const int> sources) {
  std::vector<int> all(mesh.num_vertices());
  std::iota(all.begin(), all.end(), 0);
  return polygon_geodesic_distances(mesh, sources, all);
}

Eigen::MatrixXd polygon_geodesic_distances(const TriMesh& mesh, std::span<const int> sources,
                                           std::span<const int> targets) {
  const int n = mesh.num_vertices();
  const auto& V = mesh.vertices();
  const PolygonVisibility vis(mesh);
  const auto& R = vis.reflex();
  const int nr = static_cast<int>(R.size());
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Shortest paths between reflex vertices through mutually visible pairs.
  Eigen::MatrixXd D = Eigen::MatrixXd::Constant(nr, nr, inf);
  for (int i = 0; i < nr; ++i) {
    D(i, i) = 0.0;
    for (int j = i + 1; j < nr; ++j) {
      if (vis.visible(R[i], R[j], true)) D(i, j) = D(j, i) = (R[i] - R[j]).norm();
    }
  }
  for (int k = 0; k < nr; ++k) {
    for (int i = 0; i < nr; ++i) {
      for (int j = 0; j < nr; ++j) D(i, j) = std::min(D(i, j), D(i, k) + D(k, j));
    }
  }
  std::vector<char> on_boundary(n, 0);
  for (int v : mesh.boundary_loop()) on_boundary[v] = 1;
  std::vector<char> needed(n, 0);
  for (auto list : {sources, targets}) {
    for (int v : list) {
      if (v < 0 || v >= n) throw ValidationError("geodesic: vertex index out of range");
      needed[v] = 1;
    }
  }
  // Reflex vertices visible from each vertex in use.
  std::vector<std::vector<std::pair<int, double>>> seen(n);
  if (nr > 0) {
    for (int v = 0; v < n; ++v) {
      if (!needed[v]) continue;
      for (int r = 0; r < nr; ++r) {
        if (vis.visible(V[v], R[r], true)) seen[v].emplace_back(r, (V[v] - R[r]).norm());
      }
    }
  }

  const auto nt = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd dist(static_cast<Eigen::Index>(sources.size()), nt);
  std::vector<double> via(nr);
  // Pairs that are both sources and targets are computed once and mirrored,
  // so the table is exactly symmetric on them.
  std::vector<int> row_of(n, -1), col_of(n, -1);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (row_of[sources[s]] < 0) row_of[sources[s]] = static_cast<int>(s);
  }
  for (Eigen::Index k = 0; k < nt; ++k) {
    if (col_of[targets[k]] < 0) col_of[targets[k]] = static_cast<int>(k);
  }
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const int src = sources[s];
    std::fill(via.begin(), via.end(), inf);
    for (const auto& [r1, d1] : seen[src]) {
      for (int r = 0; r < nr; ++r) via[r] = std::min(via[r], d1 + D(r1, r));
    }
    for (Eigen::Index k = 0; k < nt; ++k) {
      const int v = targets[k];
      if (row_of[v] >= 0 && row_of[v] < static_cast<int>(s) && col_of[src] >= 0) {
        dist(static_cast<Eigen::Index>(s), k) = dist(row_of[v], col_of[src]);
        continue;
      }
      double d = inf;
      if (vis.visible(V[src], V[v], on_boundary[src] && on_boundary[v])) {
        d = (V[src] - V[v]).norm();
      } else {
        for (const auto& [r, d2] : seen[v]) d = std::min(d, via[r] + d2);
      }
      if (!std::isfinite(d)) throw MeshError("geodesic: no polygon path between vertices");
      dist(static_cast<Eigen::Index>(s), k) = d;
    }
  }
  return dist;
}

bool inside_boundary_polygon(const TriMesh& mesh, const Vec2& p) {
  std::vector<Vec2> poly;
  poly.reserve(mesh.boundary_loop().size());
  for (int v : mesh.boundary_loop()) poly.push_back(mesh.vertices()[v]);
  return inside_polygon(poly, p);
}

int nearest_vertex(const TriMesh& mesh, const Vec2& p) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const double d = (mesh.vertices()[i] - p).squaredNorm();
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace fisherflow
