#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numerics beyond reading mesh geometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <functional>
#include <numbers>

#include "fisherflow/mesh.hpp"

namespace oracle {

using fisherflow::TriMesh;
using fisherflow::Vec2;
using std::numbers::pi;

// Degree-5 seven-point rule on a triangle (barycentric points, unit weights).
inline double triangle_quadrature(const Vec2& p0, const Vec2& p1, const Vec2& p2,
                                  const std::function<double(const Vec2&)>& f) {
  constexpr double a1 = 0.059715871789770, b1 = 0.470142064105115, w1 = 0.132394152788506;
  constexpr double a2 = 0.797426985353087, b2 = 0.101286507323456, w2 = 0.125939180544827;
  const std::array<std::array<double, 4>, 7> pts{{{1.0 / 3, 1.0 / 3, 1.0 / 3, 0.225},
                                                  {a1, b1, b1, w1},
                                                  {b1, a1, b1, w1},
                                                  {b1, b1, a1, w1},
                                                  {a2, b2, b2, w2},
                                                  {b2, a2, b2, w2},
                                                  {b2, b2, a2, w2}}};
  const double area = 0.5 * std::abs((p1 - p0).x() * (p2 - p0).y() - (p1 - p0).y() * (p2 - p0).x());
  double s = 0.0;
  for (const auto& q : pts) s += q[3] * f(q[0] * p0 + q[1] * p1 + q[2] * p2);
  return area * s;
}

inline double integrate(const TriMesh& mesh, const std::function<double(const Vec2&)>& f) {
  double s = 0.0;
  for (const auto& t : mesh.triangles()) {
    s += triangle_quadrature(mesh.vertices()[t[0]], mesh.vertices()[t[1]], mesh.vertices()[t[2]], f);
  }
  return s;
}

// The unit-square eigenfunction datum and its gradient.
inline double eig_rho(const Vec2& x) { return 1.0 + 0.5 * std::cos(pi * x.x()) * std::cos(pi * x.y()); }
inline Vec2 eig_grad(const Vec2& x) {
  return {-0.5 * pi * std::sin(pi * x.x()) * std::cos(pi * x.y()), -0.5 * pi * std::cos(pi * x.x()) * std::sin(pi * x.y())};
}

// Curvature of the polar boundary by central differences of the Cartesian
// parametrization, independent of the closed-form expression.
inline double fd_curvature(double r0, double a, int k, double th) {
  auto pt = [&](double t) {
    const double r = r0 + a * std::cos(k * t);
    return Vec2(r * std::cos(t), r * std::sin(t));
  };
  const double e = 1e-4;
  const Vec2 d1 = (pt(th + e) - pt(th - e)) / (2 * e);
  const Vec2 d2 = (pt(th + e) - 2 * pt(th) + pt(th - e)) / (e * e);
  return (d1.x() * d2.y() - d1.y() * d2.x()) / std::pow(d1.squaredNorm(), 1.5);
}

// Entropic JKO step on three points by direct minimization over the simplex.
// R is the entropic self-coupling of the normalized weights m; the transport
// term min_pi eps KL(pi | R) over couplings of (mu, nu) is evaluated by plain
// Sinkhorn scaling, and the objective T / (2 tau) + sum mu log(mu / m) is
// minimized on nested simplex grids down to spacing `step`. Returns masses.
struct ToyJko {
  std::array<std::array<double, 3>, 3> C;
  std::array<double, 3> m;
  double eps, tau;

  std::array<std::array<double, 3>, 3> self_coupling() const {
    const double total = m[0] + m[1] + m[2];
    std::array<double, 3> w, d{1, 1, 1};
    std::array<std::array<double, 3>, 3> G;
    for (int i = 0; i < 3; ++i) w[i] = m[i] / total;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) G[i][j] = w[i] * w[j] * std::exp(-C[i][j] / eps);
    for (int it = 0; it < 100000; ++it) {
      double change = 0.0;
      for (int i = 0; i < 3; ++i) {
        double Gd = 0.0;
        for (int j = 0; j < 3; ++j) Gd += G[i][j] * d[j];
        const double nd = std::sqrt(d[i] * w[i] / Gd);
        change = std::max(change, std::abs(nd - d[i]));
        d[i] = nd;
      }
      if (change < 1e-15) break;
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) G[i][j] *= d[i] * d[j];
    return G;
  }

  static double transport(const std::array<std::array<double, 3>, 3>& R, const std::array<double, 3>& mu,
                          const std::array<double, 3>& nu, double eps) {
    std::array<double, 3> u{1, 1, 1}, v{1, 1, 1};
    for (int it = 0; it < 20000; ++it) {
      for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += R[i][j] * v[j];
        u[i] = mu[i] > 0 ? mu[i] / s : 0.0;
      }
      double err = 0.0;
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += R[i][j] * u[i];
        err += std::abs(v[j] * s - nu[j]);
        v[j] = nu[j] / s;
      }
      if (err < 1e-14) break;
    }
    double val = 0.0;
    for (int i = 0; i < 3; ++i) {
      if (mu[i] > 0) val += mu[i] * std::log(u[i]);
      val += nu[i] * std::log(v[i]);
    }
    return eps * val;
  }

  std::array<double, 3> step(const std::array<double, 3>& nu, double fine) const {
    const auto R = self_coupling();
    auto objective = [&](const std::array<double, 3>& mu) {
      double h = 0.0;
      for (int i = 0; i < 3; ++i) {
        if (mu[i] > 0) h += mu[i] * std::log(mu[i] / m[i]);
      }
      return transport(R, mu, nu, eps) / (2 * tau) + h;
    };
    std::array<double, 3> best{1.0 / 3, 1.0 / 3, 1.0 / 3};
    double lo0 = 0.0, hi0 = 1.0, lo1 = 0.0, hi1 = 1.0;
    for (double step = 1e-2; step >= fine * 0.999; step /= 10) {
      double best_val = std::numeric_limits<double>::infinity();
      std::array<double, 3> arg = best;
      for (double a = lo0; a <= hi0 + 1e-12; a += step) {
        for (double b = lo1; b <= hi1 + 1e-12 && a + b <= 1.0 + 1e-12; b += step) {
          const std::array<double, 3> mu{a, b, std::max(0.0, 1.0 - a - b)};
          const double val = objective(mu);
          if (val < best_val) {
            best_val = val;
            arg = mu;
          }
        }
      }
      best = arg;
      lo0 = std::max(0.0, best[0] - 2 * step);
      hi0 = std::min(1.0, best[0] + 2 * step);
      lo1 = std::max(0.0, best[1] - 2 * step);
      hi1 = std::min(1.0, best[1] + 2 * step);
    }
    return best;
  }
};

}  // namespace oracle
