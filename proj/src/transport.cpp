#include "fisherflow/transport.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "fisherflow/errors.hpp"

namespace fisherflow {

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) throw ValidationError("sinkhorn: epsilon must be positive");
  if (!(tol > 0.0)) throw ValidationError("sinkhorn: tol must be positive");
  if (max_iters < 1) throw ValidationError("sinkhorn: max_iters must be positive");
}

nlohmann::json SinkhornConfig::to_json() const {
  return {{"epsilon", epsilon}, {"max_iters", max_iters}, {"tol", tol}, {"debiased", debiased}};
}

// ---------------------------------------------------------------------------
// CostTable

CostTable::CostTable(Eigen::MatrixXd C, std::vector<int> support, std::string checksum)
    : C_(std::move(C)), support_(std::move(support)), checksum_(std::move(checksum)) {
  if (C_.rows() != C_.cols() || C_.rows() != static_cast<Eigen::Index>(support_.size())) {
    throw ValidationError("cost table: matrix and support sizes differ");
  }
  for (Eigen::Index i = 0; i < C_.rows(); ++i) {
    if (C_(i, i) != 0.0) throw ValidationError("cost table: nonzero diagonal");
  }
  if (C_.minCoeff() < 0.0 || !C_.allFinite()) throw ValidationError("cost table: entries must be finite and >= 0");
  if ((C_ - C_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, C_.maxCoeff())) {
    throw ValidationError("cost table: matrix is not symmetric");
  }
}

CostTable CostTable::from_mesh(const TriMesh& mesh, GeodesicMode mode, int max_support) {
  const int n = mesh.num_vertices();
  if (max_support < 1) throw ValidationError("cost table: max_support must be positive");
  std::vector<int> support;
  const int stride = (n + max_support - 1) / max_support;
  for (int v = 0; v < n; v += stride) support.push_back(v);
  return from_support(mesh, std::move(support), mode);
}

CostTable CostTable::from_support(const TriMesh& mesh, std::vector<int> support, GeodesicMode mode) {
  const int n = mesh.num_vertices();
  if (support.empty()) throw ValidationError("cost table: empty support");
  for (std::size_t s = 0; s < support.size(); ++s) {
    if (support[s] < 0 || support[s] >= n || (s > 0 && support[s] <= support[s - 1])) {
      throw ValidationError("cost table: support must be increasing vertex indices");
    }
  }
  const auto k = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd C(k, k);
  if (mode == GeodesicMode::polygon) {
    C = polygon_geodesic_distances(mesh, support, support).array().square().matrix();
  } else {
    const Eigen::MatrixXd D = geodesic_distances(mesh, support);
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < k; ++i) C(i, j) = D(i, support[j]) * D(i, support[j]);
    }
  }
  // Symmetrize round-off from the two directions of graph Dijkstra.
  C = 0.5 * (C + C.transpose()).eval();
  C.diagonal().setZero();
  CostTable table(std::move(C), support, mesh.checksum());
  if (k < n) {
    table.assign_.resize(n);
    for (int v = 0; v < n; ++v) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (Eigen::Index s = 0; s < k; ++s) {
        const double d = (mesh.vertices()[v] - mesh.vertices()[support[s]]).squaredNorm();
        if (d < bd) {
          bd = d;
          best = static_cast<int>(s);
        }
      }
      table.assign_[v] = best;
    }
  }
  return table;
}

CostTable CostTable::from_points(const std::vector<Vec2>& points) {
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd C(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) C(i, j) = (points[i] - points[j]).squaredNorm();
  }
  std::vector<int> support(n);
  std::iota(support.begin(), support.end(), 0);
  return CostTable(std::move(C), std::move(support), "points");
}

Eigen::VectorXd CostTable::masses(const Density& rho) const {
  if (rho.mesh().checksum() != checksum_) throw ValidationError("cost table: density lives on a different mesh");
  const auto& m = rho.mesh().lumped_mass();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size());
  if (assign_.empty()) {
    for (int s = 0; s < size(); ++s) out[s] = m[support_[s]] * rho[support_[s]];
  } else {
    for (int v = 0; v < rho.size(); ++v) out[assign_[v]] += m[v] * rho[v];
  }
  return out / out.sum();
}

namespace {

constexpr char kMagic[8] = {'F', 'F', 'C', 'O', 'S', 'T', '0', '1'};

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ValidationError("cost table: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void CostTable::save(const std::filesystem::path& path) const {
  if (!assign_.empty()) throw ValidationError("cost table: subsampled tables are not cached");
  // Write to a temporary name and rename, so readers never see a partial file.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw ValidationError("cost table: cannot write " + tmp);
    os.write(kMagic, sizeof kMagic);
    write_le<std::uint64_t>(os, support_.size());
    char sum[16] = {};
    std::memcpy(sum, checksum_.data(), std::min<std::size_t>(16, checksum_.size()));
    os.write(sum, sizeof sum);
    for (int s : support_) write_le<std::int32_t>(os, s);
    for (Eigen::Index i = 0; i < C_.rows(); ++i) {
      for (Eigen::Index j = 0; j < C_.cols(); ++j) write_le<double>(os, C_(i, j));
    }
    if (!os) throw ValidationError("cost table: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CostTable CostTable::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cost table: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ValidationError("cost table: bad header in " + path.string());
  }
  const auto count = read_le<std::uint64_t>(is);
  char sum[17] = {};
  if (!is.read(sum, 16)) throw ValidationError("cost table: truncated file");
  std::vector<int> support(count);
  for (auto& s : support) s = read_le<std::int32_t>(is);
  Eigen::MatrixXd C(count, count);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint64_t j = 0; j < count; ++j) C(i, j) = read_le<double>(is);
  }
  return CostTable(std::move(C), std::move(support), std::string(sum, strnlen(sum, 16)));
}

CostTable CostTable::cached(const TriMesh& mesh, const std::filesystem::path& dir, GeodesicMode mode) {
  const auto path =
      dir / ("cost_" + mesh.checksum() + (mode == GeodesicMode::polygon ? "_polygon" : "_graph") + ".bin");
  if (std::filesystem::exists(path)) {
    CostTable t = load(path);
    if (t.checksum() == mesh.checksum() && t.size() == mesh.num_vertices()) return t;
  }
  CostTable t = from_mesh(mesh, mode);
  std::filesystem::create_directories(dir);
  t.save(path);
  return t;
}

// ---------------------------------------------------------------------------
// Sinkhorn

namespace {

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

// Problem restricted to the supports of a and b.
struct Restricted {
  std::vector<int> I, J;
  Eigen::MatrixXd C, CT;  // |I| x |J| and its transpose
  Eigen::VectorXd a, b, la, lb;
};

Restricted restrict_problem(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C) {
  if (a.size() != C.rows() || b.size() != C.cols()) throw ValidationError("sinkhorn: marginal sizes do not match cost");
  if (a.minCoeff() < 0.0 || b.minCoeff() < 0.0) throw ValidationError("sinkhorn: negative marginal");
  if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9) {
    throw ValidationError("sinkhorn: marginals must be probability vectors");
  }
  Restricted p;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] > 0.0) p.I.push_back(static_cast<int>(i));
  }
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    if (b[j] > 0.0) p.J.push_back(static_cast<int>(j));
  }
  const auto nI = static_cast<Eigen::Index>(p.I.size()), nJ = static_cast<Eigen::Index>(p.J.size());
  p.C.resize(nI, nJ);
  for (Eigen::Index j = 0; j < nJ; ++j) {
    for (Eigen::Index i = 0; i < nI; ++i) p.C(i, j) = C(p.I[i], p.J[j]);
  }
  p.CT = p.C.transpose();
  p.a.resize(nI);
  p.b.resize(nJ);
  for (Eigen::Index i = 0; i < nI; ++i) p.a[i] = a[p.I[i]];
  for (Eigen::Index j = 0; j < nJ; ++j) p.b[j] = b[p.J[j]];
  p.a /= p.a.sum();
  p.b /= p.b.sum();
  p.la = p.a.array().log();
  p.lb = p.b.array().log();
  return p;
}

// out_i = -eps * log sum_j exp(lw_j + (h_j - M(j, i)) / eps), with M stored so
// that column i is contiguous.
void soft_min(const Eigen::MatrixXd& M, const Eigen::VectorXd& h, const Eigen::VectorXd& lw, double eps,
              Eigen::VectorXd& out) {
  const Eigen::Index n = M.cols();
  out.resize(n);
  const Eigen::ArrayXd base = lw.array() + h.array() / eps;
  Eigen::ArrayXd z(M.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    z = base - M.col(i).array() / eps;
    const double mx = z.maxCoeff();
    out[i] = -eps * (mx + std::log((z - mx).exp().sum()));
  }
}

// Kernel a_i b_j exp((f_i + g_j - C_ij) / eps).
Eigen::MatrixXd stabilized_kernel(const Restricted& p, const Eigen::VectorXd& f, const Eigen::VectorXd& g, double eps) {
  Eigen::MatrixXd K(p.C.rows(), p.C.cols());
  const Eigen::ArrayXd rowpart = p.la.array() + f.array() / eps;
  for (Eigen::Index j = 0; j < p.C.cols(); ++j) {
    K.col(j) = (rowpart + (p.lb[j] + g[j] / eps) - p.C.col(j).array() / eps).exp().matrix();
  }
  return K;
}

std::vector<double> eps_schedule(double eps, double cmax) {
  std::vector<double> s;
  for (double e = std::max(eps, 0.5 * cmax); e > eps; e *= 0.5) s.push_back(e);
  s.push_back(eps);
  return s;
}

struct StageResult {
  int iterations = 0;
  double violation = std::numeric_limits<double>::infinity();
};

// Scaling iterations at fixed eps, absorbing into (f, g) whenever the
// scalings drift. Leaves the row marginal exact.
StageResult run_stage(const Restricted& p, Eigen::VectorXd& f, Eigen::VectorXd& g, double eps, double tol,
                      int max_iters) {
  StageResult r;
  soft_min(p.CT, g, p.lb, eps, f);
  Eigen::MatrixXd K = stabilized_kernel(p, f, g, eps);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(p.a.size()), v = Eigen::VectorXd::Ones(p.b.size());
  auto absorb = [&] {
    f.array() += eps * u.array().log();
    g.array() += eps * v.array().log();
    u.setOnes();
    v.setOnes();
  };
  while (r.iterations < max_iters) {
    v = p.b.cwiseQuotient(K.transpose() * u);
    u = p.a.cwiseQuotient(K * v);
    ++r.iterations;
    if (!u.allFinite() || !v.allFinite() || u.minCoeff() <= 0.0 || v.minCoeff() <= 0.0) {
      // Underflow in the kernel: fall back to exact log-domain updates.
      u.setOnes();
      v.setOnes();
      soft_min(p.C, f, p.la, eps, g);
      soft_min(p.CT, g, p.lb, eps, f);
      K = stabilized_kernel(p, f, g, eps);
      continue;
    }
    if (r.iterations % 10 == 0 || r.iterations == max_iters) {
      r.violation = (v.cwiseProduct(K.transpose() * u) - p.b).cwiseAbs().sum();
      if (r.violation <= tol) break;
    }
    const double drift = std::max(u.array().log().abs().maxCoeff(), v.array().log().abs().maxCoeff());
    if (drift > 30.0) {
      absorb();
      K = stabilized_kernel(p, f, g, eps);
    }
  }
  absorb();
  return r;
}

SinkhornResult expand(const Restricted& p, const Eigen::VectorXd& f, const Eigen::VectorXd& g, Eigen::Index na,
                      Eigen::Index nb) {
  SinkhornResult out;
  out.f = Eigen::VectorXd::Zero(na);
  out.g = Eigen::VectorXd::Zero(nb);
  for (std::size_t i = 0; i < p.I.size(); ++i) out.f[p.I[i]] = f[i];
  for (std::size_t j = 0; j < p.J.size(); ++j) out.g[p.J[j]] = g[j];
  out.value = p.a.dot(f) + p.b.dot(g);
  return out;
}

}  // namespace

SinkhornResult sinkhorn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C, double eps,
                        const SinkhornConfig& cfg) {
  cfg.validate();
  if (!(eps > 0.0)) throw ValidationError("sinkhorn: epsilon must be positive");
  const Restricted p = restrict_problem(a, b, C);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(p.a.size()), g = Eigen::VectorXd::Zero(p.b.size());
  int used = 0;
  StageResult last;
  const auto schedule = eps_schedule(eps, p.C.maxCoeff());
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const bool final_stage = s + 1 == schedule.size();
    const int budget = final_stage ? cfg.max_iters - used : std::min(200, cfg.max_iters - used);
    if (budget <= 0) break;
    last = run_stage(p, f, g, schedule[s], final_stage ? cfg.tol : std::max(cfg.tol, 1e-3), budget);
    used += last.iterations;
  }
  if (!(last.violation <= cfg.tol)) {
    throw NumericError("sinkhorn: no convergence after " + std::to_string(used) + " iterations (marginal violation " +
                           sci(last.violation) + ")",
                       last.violation);
  }
  SinkhornResult out = expand(p, f, g, a.size(), b.size());
  out.iterations = used;
  out.violation = last.violation;
  return out;
}

SinkhornResult sinkhorn_symmetric(const Eigen::VectorXd& a, const Eigen::MatrixXd& C, double eps,
                                  const SinkhornConfig& cfg) {
  cfg.validate();
  const Restricted p = restrict_problem(a, a, C);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(p.a.size()), t;
  double violation = std::numeric_limits<double>::infinity();
  int used = 0;
  for (double e : eps_schedule(eps, p.C.maxCoeff())) {
    const bool final_stage = e == eps;
    const double tol = final_stage ? cfg.tol : std::max(cfg.tol, 1e-3);
    // Averaged fixed point f <- (f + T f) / 2 of the symmetric problem.
    soft_min(p.C, f, p.la, e, t);
    f = 0.5 * (f + t);
    Eigen::MatrixXd K = stabilized_kernel(p, f, f, e);
    Eigen::VectorXd u = Eigen::VectorXd::Ones(p.a.size());
    for (int it = 0; used < cfg.max_iters; ++it) {
      ++used;
      const Eigen::VectorXd Ku = K * u;
      violation = (u.cwiseProduct(Ku) - p.a).cwiseAbs().sum();
      if (violation <= tol) break;
      u = (u.cwiseProduct(p.a.cwiseQuotient(Ku))).cwiseSqrt();
      if (!u.allFinite()) throw NumericError("sinkhorn: non-finite scaling in symmetric solve");
      if (u.array().log().abs().maxCoeff() > 30.0) {
        f.array() += e * u.array().log();
        u.setOnes();
        K = stabilized_kernel(p, f, f, e);
      }
    }
    f.array() += e * u.array().log();
  }
  if (!(violation <= cfg.tol)) {
    throw NumericError("sinkhorn: symmetric solve did not converge (marginal violation " + sci(violation) + ")",
                       violation);
  }
  SinkhornResult out = expand(p, f, f, a.size(), a.size());
  out.iterations = used;
  out.violation = violation;
  return out;
}

double sinkhorn_self(const Eigen::VectorXd& a, const Eigen::MatrixXd& C, double eps, const SinkhornConfig& cfg) {
  return sinkhorn_symmetric(a, C, eps, cfg).value;
}

double sinkhorn_divergence(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C, double eps,
                           const SinkhornConfig& cfg) {
  const double ab = sinkhorn(a, b, C, eps, cfg).value;
  return ab - 0.5 * sinkhorn_self(a, C, eps, cfg) - 0.5 * sinkhorn_self(b, C, eps, cfg);
}

double wasserstein(const Density& rho, const Density& sigma, const CostTable& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  const Eigen::VectorXd a = cost.masses(rho), b = cost.masses(sigma);
  const double v = cfg.debiased ? sinkhorn_divergence(a, b, cost.matrix(), cfg.epsilon, cfg)
                                : sinkhorn(a, b, cost.matrix(), cfg.epsilon, cfg).value;
  return std::sqrt(std::max(0.0, v));
}

double wasserstein2_extrapolated(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C,
                                 const SinkhornConfig& cfg) {
  cfg.validate();
  auto value = [&](double e) {
    return cfg.debiased ? sinkhorn_divergence(a, b, C, e, cfg) : sinkhorn(a, b, C, e, cfg).value;
  };
  const double full = value(cfg.epsilon);
  const double half = value(0.5 * cfg.epsilon);
  return 2.0 * half - full;
}

double wasserstein_extrapolated(const Density& rho, const Density& sigma, const CostTable& cost,
                                const SinkhornConfig& cfg) {
  return std::sqrt(std::max(0.0, wasserstein2_extrapolated(cost.masses(rho), cost.masses(sigma), cost.matrix(), cfg)));
}

double metric_speed(const Curve& curve, int t_index, const CostTable& cost, const SinkhornConfig& cfg) {
  curve.validate();
  if (t_index < 1 || t_index + 1 >= curve.size()) {
    throw ValidationError("metric_speed: index needs neighbours on both sides");
  }
  const double w = wasserstein_extrapolated(curve.densities[t_index - 1], curve.densities[t_index + 1], cost, cfg);
  return w / (curve.times[t_index + 1] - curve.times[t_index - 1]);
}

}  // namespace fisherflow
