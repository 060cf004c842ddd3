#include "fisherflow/functionals.hpp"

#include <cmath>
#include <limits>

#include "fisherflow/errors.hpp"

namespace fisherflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double lumped_sum(const TriMesh& mesh, const Eigen::VectorXd& v) {
  // long double keeps the unit-mass check meaningful at 1e-9 on large meshes.
  long double s = 0.0L;
  const auto& m = mesh.lumped_mass();
  for (Eigen::Index i = 0; i < v.size(); ++i) s += static_cast<long double>(m[i]) * v[i];
  return static_cast<double>(s);
}

}  // namespace

Density::Density(MeshPtr mesh, Eigen::VectorXd values, bool normalize)
    : mesh_(std::move(mesh)), values_(std::move(values)) {
  if (!mesh_) throw ValidationError("density: null mesh");
  if (values_.size() != mesh_->num_vertices()) {
    throw ValidationError("density: " + std::to_string(values_.size()) + " values for a mesh with " +
                          std::to_string(mesh_->num_vertices()) + " vertices");
  }
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] < 0.0) {
      throw ValidationError("density: value at vertex " + std::to_string(i) + " is negative or not finite");
    }
  }
  double mass = lumped_sum(*mesh_, values_);
  if (normalize) {
    if (!(mass > 0.0)) throw ValidationError("density: cannot normalize a zero field");
    values_ /= mass;
    mass = lumped_sum(*mesh_, values_);
  }
  if (std::abs(mass - 1.0) > 1e-9) {
    throw ValidationError("density: total mass " + std::to_string(mass) + " differs from 1");
  }
}

Density Density::uniform(MeshPtr mesh) {
  const double v = 1.0 / mesh->area_total();
  const int n = mesh->num_vertices();
  return Density(std::move(mesh), Eigen::VectorXd::Constant(n, v), true);
}

Density Density::from_function(MeshPtr mesh, const std::function<double(const Vec2&)>& f) {
  Eigen::VectorXd v(mesh->num_vertices());
  for (int i = 0; i < mesh->num_vertices(); ++i) v[i] = f(mesh->vertices()[i]);
  return Density(std::move(mesh), std::move(v), true);
}

double Density::mass() const { return lumped_sum(*mesh_, values_); }

nlohmann::json Density::to_json() const {
  return {{"mesh_checksum", mesh_->checksum()},
          {"values", std::vector<double>(values_.data(), values_.data() + values_.size())}};
}

Density Density::from_json(const nlohmann::json& j, MeshPtr mesh) {
  const auto sum = j.at("mesh_checksum").get<std::string>();
  if (sum != mesh->checksum()) {
    throw ValidationError("density: mesh checksum " + sum + " does not match " + mesh->checksum());
  }
  const auto v = j.at("values").get<std::vector<double>>();
  return Density(std::move(mesh), Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

VectorField VectorField::operator-() const { return *this * -1.0; }

VectorField VectorField::operator*(double s) const {
  VectorField out = *this;
  for (auto& v : out.values) v *= s;
  return out;
}

VectorField VectorField::operator+(const VectorField& o) const {
  if (o.size() != size()) throw ValidationError("vector field: size mismatch");
  VectorField out = *this;
  for (int t = 0; t < size(); ++t) {
    out.values[t] += o.values[t];
    out.defined[t] = defined[t] && o.defined[t];
  }
  return out;
}

VectorField nodal_gradient(const TriMesh& mesh, const Eigen::VectorXd& nodal) {
  VectorField F(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) F.values[t] = mesh.gradient(t, nodal);
  return F;
}

Eigen::VectorXd cell_average(const TriMesh& mesh, const Eigen::VectorXd& nodal) {
  Eigen::VectorXd out(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    out[t] = (nodal[tri[0]] + nodal[tri[1]] + nodal[tri[2]]) / 3.0;
  }
  return out;
}

double entropy(const Density& rho) {
  const auto& m = rho.mesh().lumped_mass();
  double h = 0.0;
  for (int i = 0; i < rho.size(); ++i) {
    const double r = rho[i];
    if (r > 0.0) h += m[i] * r * std::log(r);
  }
  return h;
}

double fisher(const Density& rho) {
  const TriMesh& mesh = rho.mesh();
  const Eigen::VectorXd s = rho.values().cwiseSqrt();
  double sum = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) sum += mesh.triangle_area(t) * mesh.gradient(t, s).squaredNorm();
  return 4.0 * sum;
}

double fisher_log_form(const Density& rho) {
  const TriMesh& mesh = rho.mesh();
  const Eigen::VectorXd avg = cell_average(mesh, rho.values());
  const VectorField u = log_derivative(rho);
  double sum = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    if (!u.defined[t]) {
      if (avg[t] > 0.0) return kInf;
      continue;
    }
    sum += mesh.triangle_area(t) * avg[t] * u.values[t].squaredNorm();
  }
  return sum;
}

double fisher_m(const Density& rho, double m) {
  if (!(m > 1.0 && m < 1.5)) throw ValidationError("fisher_m: exponent m must lie in (1, 3/2)");
  const TriMesh& mesh = rho.mesh();
  // rho^(m-1) is continuous at 0 for m > 1, so nodal powers need no special
  // case on triangles touching the zero set.
  const Eigen::VectorXd p = rho.values().array().pow(m - 1.0).matrix();
  const Eigen::VectorXd avg = cell_average(mesh, rho.values());
  double sum = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    sum += mesh.triangle_area(t) * avg[t] * mesh.gradient(t, p).squaredNorm();
  }
  return sum;
}

double energy_m(const Density& rho, double m) {
  if (!(m > 1.0) || !std::isfinite(m)) throw ValidationError("energy_m: exponent m must exceed 1");
  const auto& w = rho.mesh().lumped_mass();
  double sum = 0.0;
  for (int i = 0; i < rho.size(); ++i) sum += w[i] * std::pow(rho[i], m);
  return sum;
}

double action_density(double a, const Vec2& b) {
  if (a > 0.0) return b.squaredNorm() / a;
  return (b.x() == 0.0 && b.y() == 0.0) ? 0.0 : kInf;
}

double kinetic_action(const TriMesh& mesh, const Eigen::VectorXd& rho, const VectorField& F) {
  if (F.size() != mesh.num_triangles()) throw ValidationError("kinetic_action: field does not match mesh");
  const Eigen::VectorXd avg = cell_average(mesh, rho);
  double sum = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double a = action_density(avg[t], F.values[t]);
    if (std::isinf(a)) return kInf;
    sum += mesh.triangle_area(t) * a;
  }
  return sum;
}

double kinetic_action(const Density& rho, const VectorField& F) {
  return kinetic_action(rho.mesh(), rho.values(), F);
}

VectorField log_derivative(const Density& rho) {
  const TriMesh& mesh = rho.mesh();
  if (rho.values().maxCoeff() <= 0.0) throw NumericError("log_derivative: density vanishes everywhere");
  Eigen::VectorXd logs(rho.size());
  for (int i = 0; i < rho.size(); ++i) logs[i] = rho[i] > 0.0 ? std::log(rho[i]) : 0.0;
  VectorField u(mesh.num_triangles());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    if (rho[tri[0]] <= 0.0 || rho[tri[1]] <= 0.0 || rho[tri[2]] <= 0.0) {
      u.defined[t] = 0;
      continue;
    }
    u.values[t] = mesh.gradient(t, logs);
  }
  return u;
}

}  // namespace fisherflow
