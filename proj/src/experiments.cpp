#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>

#include "fisherflow/data.hpp"
#include "fisherflow/errors.hpp"
#include "fisherflow/heat.hpp"
#include "fisherflow/jko.hpp"
#include "fisherflow/transport.hpp"
#include "fisherflow/verify.hpp"

namespace fisherflow {

namespace {

using std::numbers::pi;

// Process-wide cache of immutable values. Concurrent callers asking for the
// same key wait for the first one to finish building it.
template <class T>
class Memo {
 public:
  template <class Make>
  T get(const std::string& key, Make&& make) {
    std::promise<T> promise;
    std::shared_future<T> future;
    bool owner = false;
    {
      std::lock_guard lock(mutex_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        future = promise.get_future().share();
        entries_.emplace(key, future);
        owner = true;
      } else {
        future = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(make());
      } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mutex_);
        entries_.erase(key);
      }
    }
    return future.get();
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_future<T>> entries_;
};

using HeatPtr = std::shared_ptr<const HeatOperator>;
using CostPtr = std::shared_ptr<const CostTable>;

MeshPtr mesh_of(const DomainSpec& spec) {
  static Memo<MeshPtr> memo;
  return memo.get(spec.to_json().dump(), [&] { return build_mesh(spec); });
}

HeatPtr heat_of(const MeshPtr& mesh) {
  static Memo<HeatPtr> memo;
  return memo.get(mesh->checksum(), [&] { return std::make_shared<const HeatOperator>(mesh); });
}

CostPtr full_cost_of(const MeshPtr& mesh) {
  static Memo<CostPtr> memo;
  return memo.get(mesh->checksum(), [&] { return std::make_shared<const CostTable>(CostTable::from_mesh(*mesh)); });
}

DomainSpec with_h(DomainSpec s, double h) {
  s.h = h;
  return s;
}

DomainSpec unit_square(double h) { return DomainSpec::rectangle(1.0, 1.0, h); }

std::string indexed(const std::string& prefix, int i) { return prefix + "_" + std::to_string(i); }

std::string fixed(double x, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

void require_convex(const ExperimentConfig& cfg) {
  if (!cfg.domain.is_convex()) throw ValidationError(cfg.experiment + ": needs a convex domain");
}

double require_nonconvex(const ExperimentConfig& cfg) {
  const double S = boundary_curvature(cfg.domain).S;
  if (!(S > 0.0)) throw ValidationError(cfg.experiment + ": needs a domain with S > 0");
  return S;
}

// Bumps near the concave boundary point: (inward offset, width).
constexpr std::array<std::pair<double, double>, 3> kBumps{{{0.05, 0.05}, {0.10, 0.05}, {0.10, 0.10}}};

Density make_datum(const std::string& family, const MeshPtr& mesh, int i, const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
  if (family == "uniform") return Density::uniform(mesh);
  if (family == "eigenfunction") return eigenfunction_density(mesh);
  if (family == "random_smooth") return random_smooth_density(mesh, seed);
  if (family == "filtered_smooth") {
    const double t = cfg.param("prefilter");
    return heat_of(mesh)->sample_graded(random_smooth_density(mesh, seed), {t}, 0.05).densities.front();
  }
  if (family == "bump") {
    const auto [offset, sigma] = kBumps[i % kBumps.size()];
    return bump_density(mesh, concave_anchor(mesh->spec(), offset + 0.05 * (i / 3)), sigma);
  }
  throw ValidationError("unknown datum family '" + family + "'");
}

double trapezoid(const std::vector<double>& t, const std::vector<double>& y, int i, int j) {
  double s = 0.0;
  for (int k = i; k < j; ++k) s += 0.5 * (t[k + 1] - t[k]) * (y[k] + y[k + 1]);
  return s;
}

// Fit of r(t) ~ alpha sqrt(t) + beta t and the worst excess of r over the
// reference c sqrt(t) + beta_hat t.
struct RateFit {
  FitResult fit;
  double margin = -std::numeric_limits<double>::infinity();
};

RateFit rate_fit(const std::vector<double>& t, const std::vector<double>& r, double c) {
  RateFit out;
  out.fit = fit_sqrt_linear(t, r);
  for (std::size_t k = 0; k < t.size(); ++k) {
    out.margin = std::max(out.margin, r[k] - (c * std::sqrt(t[k]) + out.fit.beta * t[k]));
  }
  return out;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// ---------------------------------------------------------------------------

Report heat_validation(const ExperimentConfig& cfg) {
  if (cfg.domain.kind != DomainSpec::Kind::rectangle) throw ValidationError("heat_validation: needs a rectangle");
  Report rep;
  const double T = cfg.param("T"), dt = cfg.param("dt");
  const double W = cfg.domain.width, H = cfg.domain.height;
  const double lambda = pi * pi * (1.0 / (W * W) + 1.0 / (H * H));
  auto error = [&](double h, double step, const std::string& label) {
    const MeshPtr mesh = mesh_of(with_h(cfg.domain, h));
    rep.meshes[label] = mesh->checksum();
    const Density rho = heat_of(mesh)->evolve(eigenfunction_density(mesh), T, step, {T}).densities.back();
    const double decay = std::exp(-lambda * T);
    double err = 0.0;
    for (int i = 0; i < mesh->num_vertices(); ++i) {
      const Vec2& x = mesh->vertices()[i];
      const double exact = (1.0 + 0.5 * std::cos(pi * x.x() / W) * std::cos(pi * x.y() / H) * decay) / (W * H);
      err = std::max(err, std::abs(rho[i] - exact));
    }
    return err;
  };
  const double e1 = error(cfg.domain.h, dt, "h");
  const double e2 = error(cfg.domain.h / 2, dt / 2, "h/2");
  rep.mesh_checksum = rep.meshes["h"];
  rep.series.push_back({"max_error", {cfg.domain.h, cfg.domain.h / 2}, {e1, e2}});
  rep.add("max_error", e1 <= cfg.tolerance("max_error"), e1, cfg.tolerance("max_error"));
  rep.add("refinement_ratio", e1 / e2 >= cfg.tolerance("refinement_ratio"), e1 / e2, cfg.tolerance("refinement_ratio"));
  return rep;
}

// ---------------------------------------------------------------------------

Report fisher_convex(const ExperimentConfig& cfg) {
  require_convex(cfg);
  Report rep;
  rep.add("domain_S_zero", boundary_curvature(cfg.domain).S == 0.0, boundary_curvature(cfg.domain).S, 0.0);
  const double T = cfg.param("T");
  std::array<double, 2> worst{0.0, 0.0};
  double raw = -std::numeric_limits<double>::infinity();  // largest I_{n+1} / I_n - 1, unclamped
  for (int level = 0; level < 2; ++level) {
    const double h = cfg.domain.h / (1 << level), dt = cfg.param("dt") / (1 << level);
    const std::string label = level == 0 ? "h" : "h/2";
    const MeshPtr mesh = mesh_of(with_h(cfg.domain, h));
    const HeatPtr op = heat_of(mesh);
    rep.meshes[label] = mesh->checksum();
    const int steps = static_cast<int>(std::lround(T / dt));
    for (int i = 0; i < cfg.count; ++i) {
      Density rho = make_datum(cfg.datum, mesh, i, cfg);
      Series s{indexed("fisher_" + label, i), {0.0}, {fisher(rho)}};
      // Ratios of round-off are meaningless; near-constant data are skipped.
      const double floor = std::max(1e-12, 1e-12 * s.value.front());
      if (s.value.front() < 1e-12) {
        rep.notes.push_back(indexed(label, i) + ": initial Fisher information below 1e-12, skipped");
      }
      double datum_worst = 0.0;
      for (int n = 1; n <= steps; ++n) {
        rho = op->step(rho, dt);
        const double I = fisher(rho);
        if (s.value.back() > floor) {
          datum_worst = std::max(datum_worst, I / s.value.back() - 1.0);
          raw = std::max(raw, I / s.value.back() - 1.0);
        }
        s.t.push_back(n * dt);
        s.value.push_back(I);
      }
      worst[level] = std::max(worst[level], datum_worst);
      rep.series.push_back(std::move(s));
    }
    const double tol = cfg.tolerance("mono_per_h") * h;
    rep.add("monotone_" + label, worst[level] <= tol, worst[level], tol);
  }
  rep.mesh_checksum = rep.meshes["h"];
  const double half = cfg.tolerance("refinement") * worst[0];
  rep.add("violation_shrinks", worst[1] <= half, worst[1], half);
  rep.add("largest_step_change", raw <= 0.0, raw, 0.0, false);
  return rep;
}

// ---------------------------------------------------------------------------

Report fisher_nonconvex(const ExperimentConfig& cfg) {
  const double S = require_nonconvex(cfg);
  const double coef = 4.0 * S / std::sqrt(pi), cap = coef * (1.0 + cfg.slack);
  Report rep;
  const std::vector<double> ts = geometric_times(cfg.t_min, cfg.t_max, cfg.samples);
  const double rel = cfg.param("rel_step");

  auto run = [&](const MeshPtr& mesh, const std::string& family, const std::string& label,
                 std::vector<RateFit>& out, double& growth) {
    const HeatPtr op = heat_of(mesh);
    for (int i = 0; i < cfg.count; ++i) {
      const Density rho0 = make_datum(family, mesh, i, cfg);
      const double I0 = fisher(rho0);
      if (I0 < 1e-12) {
        rep.notes.push_back(indexed(label, i) + ": initial Fisher information below 1e-12, skipped");
        continue;
      }
      const Curve c = op->sample_graded(rho0, ts, rel);
      std::vector<double> r;
      for (const Density& d : c.densities) r.push_back(std::log(fisher(d) / I0));
      for (std::size_t k = 0; k < r.size(); ++k) growth = std::max(growth, r[k] - (k ? r[k - 1] : 0.0));
      out.push_back(rate_fit(ts, r, coef));
      rep.series.push_back({indexed("log_ratio_" + label, i), ts, r});
      rep.fits.emplace_back(indexed(label, i), out.back().fit);
    }
  };

  const MeshPtr mesh = mesh_of(cfg.domain);
  rep.mesh_checksum = rep.meshes["domain"] = mesh->checksum();
  std::vector<RateFit> fits;
  double growth = -std::numeric_limits<double>::infinity();
  run(mesh, cfg.datum, "datum", fits, growth);

  double alpha = -std::numeric_limits<double>::infinity(), margin = alpha;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (fits[i].fit.alpha > alpha) rep.governing_fit = rep.fits[i].first;
    alpha = std::max(alpha, fits[i].fit.alpha);
    margin = std::max(margin, fits[i].margin);
  }
  if (fits.empty()) {
    rep.notes.push_back("no datum with positive Fisher information; rate verdicts are vacuous");
    alpha = margin = 0.0;
  }
  rep.add("rate", alpha <= cap, alpha, cap);
  rep.add("bound", margin <= cfg.tolerance("bound"), margin, cfg.tolerance("bound"));
  rep.add("strict_growth_observed", growth > 0.0, growth, 0.0, false);

  DomainSpec control = cfg.domain;
  control.a = 0.0;
  const MeshPtr cmesh = mesh_of(control);
  rep.meshes["control"] = cmesh->checksum();
  std::vector<RateFit> cfits;
  double cgrowth = -std::numeric_limits<double>::infinity();
  run(cmesh, "filtered_smooth", "control", cfits, cgrowth);
  double calpha = 0.0;
  for (const RateFit& f : cfits) calpha = std::max(calpha, std::abs(f.fit.alpha));
  rep.add("control_rate", calpha <= cfg.tolerance("control_alpha"), calpha, cfg.tolerance("control_alpha"));
  return rep;
}

// ---------------------------------------------------------------------------

// Per interval: (H_{n+1} - H_n) / dt and sum_T area_T grad log rho_mid . F_T.
struct ChainRule {
  std::vector<double> t_mid, dH, rhs;
};

ChainRule chain_rule_terms(const Curve& c) {
  if (!c.momenta) throw ValidationError("chain rule: curve has no momenta");
  const TriMesh& mesh = c.mesh();
  ChainRule out;
  for (int n = 0; n + 1 < c.size(); ++n) {
    const Density mid(c.mesh_ptr(), interval_midpoint(c, n));
    const VectorField g = log_derivative(mid);
    const VectorField& F = (*c.momenta)[n];
    double s = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      if (!g.defined[t]) {
        throw ValidationError("chain rule: density vanishes on a triangle; apply heat_regularize first");
      }
      s += mesh.triangle_area(t) * g.values[t].dot(F.values[t]);
    }
    const double dt = c.times[n + 1] - c.times[n];
    out.t_mid.push_back(0.5 * (c.times[n] + c.times[n + 1]));
    out.dH.push_back((entropy(c.densities[n + 1]) - entropy(c.densities[n])) / dt);
    out.rhs.push_back(s);
  }
  return out;
}

struct ChainRuleCheck {
  double defect = 0.0;  // max |dH - rhs| / max |rhs|
  double ede = 0.0;     // |Delta H + int rhs| / |int rhs|
  double dissipation = 0.0;
};

ChainRuleCheck check_chain_rule(const Curve& c, const ChainRule& cr) {
  ChainRuleCheck out;
  double scale = 0.0;
  for (std::size_t n = 0; n < cr.rhs.size(); ++n) {
    out.defect = std::max(out.defect, std::abs(cr.dH[n] - cr.rhs[n]));
    scale = std::max(scale, std::abs(cr.rhs[n]));
    out.dissipation -= (c.times[n + 1] - c.times[n]) * cr.rhs[n];
  }
  out.defect = scale > 0.0 ? out.defect / scale : out.defect;
  const double drop = entropy(c.densities.front()) - entropy(c.densities.back());
  out.ede = out.dissipation != 0.0 ? std::abs(drop - out.dissipation) / std::abs(out.dissipation) : std::abs(drop);
  return out;
}

Report exact_chain_rule(const ExperimentConfig& cfg) {
  Report rep;
  const MeshPtr mesh = mesh_of(cfg.domain);
  rep.mesh_checksum = rep.meshes["domain"] = mesh->checksum();
  const double T = cfg.param("T"), dt = cfg.param("dt");
  const Curve c = heat_of(mesh)->evolve(make_datum(cfg.datum, mesh, 0, cfg), T, dt, uniform_times(T, dt));

  const ChainRule cr = chain_rule_terms(c);
  const ChainRuleCheck ok = check_chain_rule(c, cr);
  std::vector<double> H, I;
  for (const Density& d : c.densities) {
    H.push_back(entropy(d));
    I.push_back(fisher(d));
  }
  const double fisher_integral = trapezoid(c.times, I, 0, c.size() - 1);
  const double ede_fisher = std::abs(H.front() - H.back() - fisher_integral) / fisher_integral;

  Curve neg = c;
  for (VectorField& F : *neg.momenta) F = -F;
  const ChainRuleCheck bad = check_chain_rule(neg, chain_rule_terms(neg));

  rep.series.push_back({"entropy", c.times, H});
  rep.series.push_back({"fisher", c.times, I});
  std::vector<double> rate(cr.rhs.size());
  std::transform(cr.rhs.begin(), cr.rhs.end(), rate.begin(), [](double x) { return -x; });
  rep.series.push_back({"dissipation_rate", cr.t_mid, rate});

  const double tcr = cfg.tolerance("chain_rule"), tede = cfg.tolerance("ede");
  rep.add("chain_rule", ok.defect <= tcr, ok.defect, tcr);
  rep.add("ede", ok.ede <= tede, ok.ede, tede);
  rep.add("ede_fisher", ede_fisher <= tede, ede_fisher, tede);
  rep.add("negated_momenta_fail", bad.ede > tede && bad.defect > tcr, bad.ede, tede);
  return rep;
}

// ---------------------------------------------------------------------------

// Entropy, Fisher information and metric speed along a sampled curve. Speeds
// use central differences, so the first and last entries are NaN.
struct SpeedSeries {
  std::vector<double> t, H, I, speed;
};

SpeedSeries speeds_along(const Curve& c, const CostTable& cost, const SinkhornConfig& sc) {
  SpeedSeries s;
  s.t = c.times;
  s.speed.assign(c.size(), std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < c.size(); ++i) {
    s.H.push_back(entropy(c.densities[i]));
    s.I.push_back(fisher(c.densities[i]));
    if (i > 0 && i + 1 < c.size()) s.speed[i] = metric_speed(c, i, cost, sc);
  }
  return s;
}

SinkhornConfig transport_config(double eps, double tol) {
  SinkhornConfig sc;
  sc.epsilon = eps;
  sc.tol = tol;
  return sc;
}

SpeedSeries heat_speeds(const ExperimentConfig& cfg, Report& rep) {
  static Memo<std::shared_ptr<const SpeedSeries>> memo;
  const MeshPtr mesh = mesh_of(cfg.domain);
  rep.mesh_checksum = rep.meshes["heat"] = mesh->checksum();
  const double T = cfg.param("T"), spacing = cfg.param("spacing"), dt = cfg.param("dt");
  const double eps = cfg.param("eps_factor") * cfg.domain.h * cfg.domain.h;
  const nlohmann::json key = {mesh->checksum(), cfg.datum, cfg.seed, T, spacing, dt, eps};
  return *memo.get(key.dump(), [&] {
    const Curve c = heat_of(mesh)->evolve(make_datum(cfg.datum, mesh, 0, cfg), T, dt, uniform_times(T, spacing));
    return std::make_shared<const SpeedSeries>(speeds_along(c, *full_cost_of(mesh), transport_config(eps, 1e-9)));
  });
}

Curve jko_run(const ExperimentConfig& cfg, const MeshPtr& mesh, double tau, double eps) {
  JkoConfig jc;
  jc.tau = tau;
  jc.epsilon = eps;
  return jko_curve(make_datum(cfg.datum, mesh, 0, cfg), cfg.param("T"), *full_cost_of(mesh), jc);
}

// max over interior pairs i < j of |H_j - H_i| / int_i^j sqrt(I) speed, and
// the largest relative gap between the two sides.
std::pair<double, double> upper_gradient_ratio(const SpeedSeries& s) {
  std::vector<double> g(s.t.size(), 0.0);
  for (std::size_t k = 1; k + 1 < s.t.size(); ++k) g[k] = std::sqrt(s.I[k]) * s.speed[k];
  double ratio = 0.0, gap = 0.0;
  const int last = static_cast<int>(s.t.size()) - 2;
  for (int i = 1; i <= last; ++i) {
    for (int j = i + 1; j <= last; ++j) {
      const double lhs = std::abs(s.H[j] - s.H[i]), rhs = trapezoid(s.t, g, i, j);
      ratio = std::max(ratio, lhs / rhs);
      gap = std::max(gap, std::abs(lhs - rhs) / rhs);
    }
  }
  return {ratio, gap};
}

void add_speed_series(Report& rep, const std::string& label, const SpeedSeries& s) {
  std::vector<double> t, v;
  for (std::size_t k = 1; k + 1 < s.t.size(); ++k) {
    t.push_back(s.t[k]);
    v.push_back(s.speed[k]);
  }
  rep.series.push_back({"entropy_" + label, s.t, s.H});
  rep.series.push_back({"fisher_" + label, s.t, s.I});
  rep.series.push_back({"speed_" + label, t, v});
}

Report upper_gradient(const ExperimentConfig& cfg) {
  Report rep;
  const SpeedSeries heat = heat_speeds(cfg, rep);
  add_speed_series(rep, "heat", heat);
  const auto [ratio, gap] = upper_gradient_ratio(heat);
  const double tug = cfg.tolerance("upper_gradient");
  rep.add("heat_upper_gradient", ratio <= 1.0 + tug, ratio, 1.0 + tug);
  rep.add("heat_tightness", gap <= cfg.tolerance("tightness"), gap, cfg.tolerance("tightness"));

  const double t_probe = cfg.param("speed_time");
  std::size_t k = 1;
  for (std::size_t j = 1; j + 1 < heat.t.size(); ++j) {
    if (std::abs(heat.t[j] - t_probe) < std::abs(heat.t[k] - t_probe)) k = j;
  }
  const double speed_err = std::abs(heat.speed[k] / std::sqrt(heat.I[k]) - 1.0);
  rep.add("metric_speed_vs_sqrt_fisher", speed_err <= cfg.tolerance("metric_speed"), speed_err,
          cfg.tolerance("metric_speed"));

  const MeshPtr mesh = mesh_of(cfg.domain);
  const double h2 = cfg.domain.h * cfg.domain.h;
  const Curve jc = jko_run(cfg, mesh, cfg.param("jko_tau"), cfg.param("jko_eps_factor") * h2);
  const SpeedSeries jko = speeds_along(jc, *full_cost_of(mesh), transport_config(cfg.param("eps_factor") * h2, 1e-9));
  add_speed_series(rep, "jko", jko);
  const double jratio = upper_gradient_ratio(jko).first;
  rep.add("jko_upper_gradient", jratio <= 1.0 + tug, jratio, 1.0 + tug);
  return rep;
}

// ---------------------------------------------------------------------------

// Worst of (H_j - H_i + D_ij) / D_ij over interior pairs with
// D_ij = 1/2 int (speed^2 + I).
std::pair<double, double> edi_excess(const SpeedSeries& s) {
  std::vector<double> d(s.t.size(), 0.0);
  for (std::size_t k = 1; k + 1 < s.t.size(); ++k) d[k] = 0.5 * (s.speed[k] * s.speed[k] + s.I[k]);
  double worst = -std::numeric_limits<double>::infinity(), gap = 0.0;
  const int last = static_cast<int>(s.t.size()) - 2;
  for (int i = 1; i <= last; ++i) {
    for (int j = i + 1; j <= last; ++j) {
      const double D = trapezoid(s.t, d, i, j), e = (s.H[j] - s.H[i] + D) / D;
      worst = std::max(worst, e);
      gap = std::max(gap, std::abs(e));
    }
  }
  return {worst, gap};
}

Report edi(const ExperimentConfig& cfg) {
  Report rep;
  const SpeedSeries heat = heat_speeds(cfg, rep);
  add_speed_series(rep, "heat", heat);
  const auto [excess, gap] = edi_excess(heat);
  rep.add("heat_edi", excess <= cfg.tolerance("edi"), excess, cfg.tolerance("edi"));
  rep.add("heat_ede", gap <= cfg.tolerance("ede"), gap, cfg.tolerance("ede"));

  const MeshPtr mesh = mesh_of(unit_square(cfg.param("jko_h")));
  rep.meshes["jko"] = mesh->checksum();
  const double tau = cfg.param("jko_tau"), eps = cfg.param("jko_eps");
  const Curve jc = jko_run(cfg, mesh, tau, eps);
  const CostTable& cost = *full_cost_of(mesh);
  const SinkhornConfig sc = transport_config(eps, 1e-10);
  double step_excess = -std::numeric_limits<double>::infinity();
  std::vector<double> excess_t, excess_v;
  for (int n = 0; n + 1 < jc.size(); ++n) {
    const Density& prev = jc.densities[n];
    const Density& next = jc.densities[n + 1];
    const double e = entropy(next) + jko_transport_cost(next, prev, cost, eps, sc) / (2.0 * tau) - entropy(prev);
    step_excess = std::max(step_excess, e);
    excess_t.push_back(jc.times[n + 1]);
    excess_v.push_back(e);
  }
  rep.series.push_back({"jko_step_excess", excess_t, excess_v});
  rep.add("jko_step_inequality", step_excess <= cfg.tolerance("jko_step"), step_excess, cfg.tolerance("jko_step"));

  const double h2 = mesh->spec().h * mesh->spec().h;
  const SpeedSeries js = speeds_along(jc, cost, transport_config(cfg.param("eps_factor") * h2, 1e-9));
  add_speed_series(rep, "jko", js);
  // Entropic blur adds dissipation the metric speed does not see; the
  // integrated inequality gets slack proportional to eps / tau.
  const double jexcess = edi_excess(js).first, budget = cfg.tolerance("jko_edi") * eps / tau;
  rep.add("jko_edi", jexcess <= budget, jexcess, budget);
  return rep;
}

// ---------------------------------------------------------------------------

struct WcRates {
  std::vector<RateFit> fits;
  std::vector<Series> series;
  std::string checksum;
  int support = 0;
};

// Log distance ratios of heat-evolved bump pairs straddling the concave
// boundary point, on a cost table restricted to a disc around it.
WcRates wc_rates(const ExperimentConfig& cfg, double coef) {
  static Memo<std::shared_ptr<const WcRates>> memo;
  return *memo.get(cfg.to_json().dump(), [&] {
    auto out = std::make_shared<WcRates>();
    const MeshPtr mesh = mesh_of(cfg.domain);
    out->checksum = mesh->checksum();
    const double h = cfg.domain.h, theta = boundary_curvature(cfg.domain).theta_at_min;
    const Vec2 tip = cfg.domain.boundary_point(theta);
    std::vector<int> support;
    for (int v = 0; v < mesh->num_vertices(); ++v) {
      if ((mesh->vertices()[v] - tip).norm() < cfg.param("region")) support.push_back(v);
    }
    out->support = static_cast<int>(support.size());
    const CostTable cost = CostTable::from_support(*mesh, support);
    const SinkhornConfig sc = transport_config(cfg.param("eps_factor") * h * h, cfg.param("sinkhorn_tol"));
    const std::vector<double> ts = geometric_times(cfg.t_min, cfg.t_max, cfg.samples);
    const HeatPtr op = heat_of(mesh);
    const double R = cfg.domain.radius(theta);
    for (int i = 0; i < cfg.count; ++i) {
      const double sigma = (1 + i) * h, spread = 0.03 + 0.02 * i;
      const Density mu = bump_density(mesh, R * Vec2(std::cos(theta - spread), std::sin(theta - spread)), sigma);
      const Density nu = bump_density(mesh, R * Vec2(std::cos(theta + spread), std::sin(theta + spread)), sigma);
      const double W0 = wasserstein_extrapolated(mu, nu, cost, sc);
      const Curve cm = op->sample_graded(mu, ts, cfg.param("rel_step"));
      const Curve cn = op->sample_graded(nu, ts, cfg.param("rel_step"));
      std::vector<double> r;
      for (std::size_t k = 0; k < ts.size(); ++k) {
        r.push_back(std::log(wasserstein_extrapolated(cm.densities[k], cn.densities[k], cost, sc) / W0));
      }
      out->fits.push_back(rate_fit(ts, r, coef));
      out->series.push_back({indexed("log_distance_ratio", i), ts, r});
    }
    return std::shared_ptr<const WcRates>(out);
  });
}

Report wasserstein_contraction(const ExperimentConfig& cfg) {
  Report rep;
  const bool convex = cfg.domain.is_convex();
  const DomainSpec cdom = convex ? cfg.domain : unit_square(cfg.param("convex_h"));
  const MeshPtr cmesh = mesh_of(cdom);
  rep.meshes["convex"] = cmesh->checksum();
  const SinkhornConfig sc = transport_config(cfg.param("convex_eps_factor") * cdom.h * cdom.h, 1e-9);
  const CostTable& cost = *full_cost_of(cmesh);
  const std::vector<double> times{0.01, 0.02, 0.05};
  std::vector<double> sample{0.0};
  sample.insert(sample.end(), times.begin(), times.end());
  const HeatPtr op = heat_of(cmesh);
  const Curve cm = op->evolve(eigenfunction_density(cmesh, 0.5, 1, 0), times.back(), cfg.param("dt"), sample);
  const Curve cn = op->evolve(eigenfunction_density(cmesh, 0.5, 0, 1), times.back(), cfg.param("dt"), sample);
  const double W0 = wasserstein_extrapolated(cm.densities[0], cn.densities[0], cost, sc);
  double worst = 0.0;
  Series ratios{"convex_ratio", {}, {}};
  for (std::size_t k = 1; k < sample.size(); ++k) {
    const double ratio = wasserstein_extrapolated(cm.densities[k], cn.densities[k], cost, sc) / W0;
    worst = std::max(worst, ratio);
    ratios.t.push_back(cm.times[k]);
    ratios.value.push_back(ratio);
  }
  rep.series.push_back(ratios);
  const double tc = 1.0 + cfg.tolerance("contraction");
  rep.add("convex_contraction", worst <= tc, worst, tc);

  if (convex) {
    rep.mesh_checksum = cmesh->checksum();
    rep.notes.push_back("convex domain: the non-convex rate check does not apply");
    return rep;
  }
  const double S = require_nonconvex(cfg);
  const double coef = 2.0 * S / std::sqrt(pi), cap = coef * (1.0 + cfg.slack);
  const WcRates wc = wc_rates(cfg, coef);
  rep.mesh_checksum = rep.meshes["domain"] = wc.checksum;
  rep.notes.push_back("cost table restricted to " + std::to_string(wc.support) + " vertices near the concave point");
  double alpha = -std::numeric_limits<double>::infinity(), margin = alpha;
  for (std::size_t i = 0; i < wc.fits.size(); ++i) {
    rep.fits.emplace_back(indexed("pair", static_cast<int>(i)), wc.fits[i].fit);
    if (wc.fits[i].fit.alpha > alpha) rep.governing_fit = rep.fits.back().first;
    alpha = std::max(alpha, wc.fits[i].fit.alpha);
    margin = std::max(margin, wc.fits[i].margin);
  }
  rep.series.insert(rep.series.end(), wc.series.begin(), wc.series.end());
  rep.add("rate", alpha <= cap, alpha, cap);
  rep.add("bound", margin <= cfg.tolerance("bound"), margin, cfg.tolerance("bound"));
  return rep;
}

// ---------------------------------------------------------------------------

double max_squared_gradient(const TriMesh& mesh, const Eigen::VectorXd& f) {
  double m = 0.0;
  for (int t = 0; t < mesh.num_triangles(); ++t) m = std::max(m, mesh.gradient(t, f).squaredNorm());
  return m;
}

// Worst of (|grad P_t f|^2 - P_t |grad f|^2) / max |grad f|^2 over triangles,
// times and test functions: cos(pi x) on the bounding box plus seeded ones.
double convex_ge_excess(const MeshPtr& mesh, const ExperimentConfig& cfg, const std::vector<double>& ts,
                        Report& rep, const std::string& label) {
  const HeatPtr op = heat_of(mesh);
  std::vector<Eigen::VectorXd> fs;
  {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Vec2& x : mesh->vertices()) {
      lo = std::min(lo, x.x());
      hi = std::max(hi, x.x());
    }
    Eigen::VectorXd f(mesh->num_vertices());
    for (int i = 0; i < mesh->num_vertices(); ++i) f[i] = std::cos(pi * (mesh->vertices()[i].x() - lo) / (hi - lo));
    fs.push_back(f);
  }
  for (int i = 0; i < cfg.count; ++i) fs.push_back(random_test_function(*mesh, cfg.seed + i));
  double excess = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const Eigen::VectorXd g = nodal_squared_gradient(*mesh, fs[i]);
    const double gmax = max_squared_gradient(*mesh, fs[i]);
    const auto Pf = op->apply_graded(fs[i], ts, cfg.param("rel_step"));
    const auto Pg = op->apply_graded(g, ts, cfg.param("rel_step"));
    std::vector<double> series;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const Eigen::VectorXd avg = cell_average(*mesh, Pg[k]);
      double e = -std::numeric_limits<double>::infinity();
      for (int t = 0; t < mesh->num_triangles(); ++t) e = std::max(e, mesh->gradient(t, Pf[k]).squaredNorm() - avg[t]);
      series.push_back(e / gmax);
      excess = std::max(excess, e / gmax);
    }
    rep.series.push_back({indexed("convex_excess_" + label, static_cast<int>(i)), ts, series});
  }
  return excess;
}

Report gradient_estimate(const ExperimentConfig& cfg) {
  Report rep;
  const bool convex = cfg.domain.is_convex();
  const std::vector<double> ts = geometric_times(cfg.t_min, cfg.t_max, cfg.samples);
  const double rel = cfg.param("rel_step");

  // The excess at t -> 0 is the O(h) gap between triangle gradients and their
  // vertex averages; the coarser mesh shows it shrinking.
  const DomainSpec cdom = convex ? cfg.domain : unit_square(cfg.param("convex_h"));
  const MeshPtr cmesh = mesh_of(cdom), coarse = mesh_of(with_h(cdom, 2.0 * cdom.h));
  rep.meshes["convex"] = cmesh->checksum();
  rep.meshes["convex_2h"] = coarse->checksum();
  const double excess = convex_ge_excess(cmesh, cfg, ts, rep, "h");
  const double excess2 = convex_ge_excess(coarse, cfg, ts, rep, "2h");
  rep.add("convex_pointwise", excess <= cfg.tolerance("ge"), excess, cfg.tolerance("ge"));
  rep.add("convex_excess_shrinks", excess < excess2, excess, excess2);

  if (convex) {
    rep.mesh_checksum = cmesh->checksum();
    rep.notes.push_back("convex domain: the non-convex rate check does not apply");
    return rep;
  }
  const double S = require_nonconvex(cfg);
  const double coef = 4.0 * S / std::sqrt(pi), cap = coef * (1.0 + cfg.slack);
  const MeshPtr mesh = mesh_of(cfg.domain);
  rep.mesh_checksum = rep.meshes["domain"] = mesh->checksum();
  const HeatPtr op = heat_of(mesh);
  double alpha = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg.count; ++i) {
    const Eigen::VectorXd f = random_test_function(*mesh, cfg.seed + i);
    const Eigen::VectorXd g = nodal_squared_gradient(*mesh, f);
    const auto Pf = op->apply_graded(f, ts, rel);
    const auto Pg = op->apply_graded(g, ts, rel);
    std::vector<double> loglam;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const Eigen::VectorXd avg = cell_average(*mesh, Pg[k]);
      double lam = 0.0;
      for (int t = 0; t < mesh->num_triangles(); ++t) lam = std::max(lam, mesh->gradient(t, Pf[k]).squaredNorm() / avg[t]);
      loglam.push_back(std::log(lam));
    }
    const FitResult fit = fit_sqrt_linear(ts, loglam);
    rep.fits.emplace_back(indexed("f", i), fit);
    rep.series.push_back({indexed("log_lambda", i), ts, loglam});
    if (fit.alpha > alpha) rep.governing_fit = rep.fits.back().first;
    alpha = std::max(alpha, fit.alpha);
  }
  rep.add("rate", alpha <= cap, alpha, cap);

  ExperimentConfig wcfg = default_config("wasserstein_contraction");
  wcfg.domain = cfg.domain;
  wcfg.seed = cfg.seed;
  const WcRates wc = wc_rates(wcfg, 2.0 * S / std::sqrt(pi));
  double walpha = -std::numeric_limits<double>::infinity();
  for (const RateFit& f : wc.fits) walpha = std::max(walpha, f.fit.alpha);
  const double diff = std::abs(alpha - 2.0 * walpha) / std::max(std::abs(alpha), std::abs(2.0 * walpha));
  rep.add("kuwada", diff <= cfg.tolerance("kuwada"), diff, cfg.tolerance("kuwada"));
  rep.notes.push_back("doubled contraction rate " + fixed(2.0 * walpha) + " vs gradient-estimate rate " + fixed(alpha));
  return rep;
}

// ---------------------------------------------------------------------------

Report porous_fisher(const ExperimentConfig& cfg) {
  const double m = cfg.param("m");
  if (!(m > 1.0 && m < 1.5)) throw ValidationError("porous_fisher: m must lie in (1, 3/2)");
  Report rep;
  const MeshPtr mesh = mesh_of(cfg.domain);
  rep.mesh_checksum = rep.meshes["domain"] = mesh->checksum();
  const std::vector<double> ts = geometric_times(cfg.t_min, cfg.t_max, cfg.samples);
  const Density rho0 = make_datum(cfg.datum, mesh, 0, cfg);
  const Curve c = heat_of(mesh)->sample_graded(rho0, ts, cfg.param("rel_step"));
  const double tfit = cfg.tolerance("fit_residual");
  for (double mm : {m, cfg.param("m_low"), cfg.param("m_high")}) {
    const std::string label = "m" + fixed(mm);
    const double I0 = fisher_m(rho0, mm);
    if (I0 < 1e-12) {
      rep.notes.push_back(label + ": initial porous Fisher information below 1e-12, skipped");
      continue;
    }
    std::vector<double> r;
    for (const Density& d : c.densities) r.push_back(std::log(fisher_m(d, mm) / I0));
    const FitResult fit = fit_sqrt_linear(ts, r);
    rep.fits.emplace_back(label, fit);
    rep.series.push_back({"log_ratio_" + label, ts, r});
    const double rel_res = fit.residual / max_abs(r);
    rep.add("fit_" + label, std::isfinite(fit.alpha) && rel_res <= tfit, rel_res, tfit);
  }
  rep.governing_fit = "m" + fixed(m);
  int rejected = 0;
  for (double bad : {1.0, 1.5}) {
    try {
      fisher_m(rho0, bad);
    } catch (const ValidationError&) {
      ++rejected;
    }
  }
  rep.add("out_of_range_rejected", rejected == 2, rejected, 2);
  return rep;
}

// ---------------------------------------------------------------------------

Report transport_oracle(const ExperimentConfig& cfg) {
  Report rep;
  const int max_points = static_cast<int>(cfg.param("max_points"));
  if (max_points < 2) throw ValidationError("transport_oracle: max_points must be at least 2");
  double worst = 0.0;
  Series errors{"relative_error", {}, {}};
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(i));
    const int n = 2 + i % (max_points - 1);
    std::vector<Vec2> pts;
    for (int k = 0; k < 2 * n; ++k) {
      const double x = rng.uniform();
      pts.emplace_back(x, rng.uniform());
    }
    const CostTable cost = CostTable::from_points(pts);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += (pts[k] - pts[n + perm[k]]).squaredNorm();
      best = std::min(best, s / n);
    } while (std::next_permutation(perm.begin(), perm.end()));
    Eigen::VectorXd a = Eigen::VectorXd::Zero(2 * n), b = a;
    a.head(n).setConstant(1.0 / n);
    b.tail(n).setConstant(1.0 / n);
    SinkhornConfig sc = transport_config(cfg.param("eps_factor") * cost.matrix().mean(), cfg.param("sinkhorn_tol"));
    sc.max_iters = static_cast<int>(cfg.param("max_iters"));
    const double w2 = wasserstein2_extrapolated(a, b, cost.matrix(), sc);
    const double err = std::abs(w2 - best) / best;
    worst = std::max(worst, err);
    errors.t.push_back(n);
    errors.value.push_back(err);
  }
  rep.series.push_back(errors);
  rep.mesh_checksum = "points";
  rep.add("brute_force", worst <= cfg.tolerance("relative"), worst, cfg.tolerance("relative"));
  return rep;
}

// ---------------------------------------------------------------------------

Report jko_convergence(const ExperimentConfig& cfg) {
  Report rep;
  const MeshPtr mesh = mesh_of(cfg.domain);
  rep.mesh_checksum = rep.meshes["domain"] = mesh->checksum();
  const double T = cfg.param("T"), tau = cfg.param("tau"), c = cfg.param("eps_per_tau2");
  const Density rho0 = make_datum(cfg.datum, mesh, 0, cfg);
  const Density ref = heat_of(mesh)->evolve(rho0, T, cfg.param("ref_dt"), {T}).densities.back();
  const Eigen::VectorXd& mass = mesh->lumped_mass();

  JkoConfig jc;
  jc.tau = tau;
  jc.epsilon = c * tau * tau;
  const Density u = Density::uniform(mesh);
  const double drift = (jko_step(u, *full_cost_of(mesh), jc).values() - u.values()).cwiseAbs().maxCoeff();
  rep.add("uniform_fixed_point", drift <= cfg.tolerance("fixed_point"), drift, cfg.tolerance("fixed_point"));

  std::array<double, 2> l1{};
  Series s{"l1_error", {}, {}};
  for (int k = 0; k < 2; ++k) {
    const double tk = tau / (1 << k);
    const Curve curve = jko_run(cfg, mesh, tk, c * tk * tk);
    l1[k] = mass.dot((curve.densities.back().values() - ref.values()).cwiseAbs());
    s.t.push_back(tk);
    s.value.push_back(l1[k]);
  }
  rep.series.push_back(s);
  rep.add("l1_at_tau", l1[0] <= cfg.tolerance("l1"), l1[0], cfg.tolerance("l1"));
  rep.add("l1_improvement", l1[0] / l1[1] >= cfg.tolerance("improvement"), l1[0] / l1[1], cfg.tolerance("improvement"));
  return rep;
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig default_config(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  const DomainSpec star = DomainSpec::polar_star(1.0, 0.5, 3, 0.02);
  if (experiment == "heat_validation") {
    c.domain = unit_square(0.04);
    c.datum = "eigenfunction";
    c.params = {{"T", 0.05}, {"dt", 1e-4}};
    c.tol = {{"max_error", 1e-2}, {"refinement_ratio", 1.8}};
  } else if (experiment == "fisher_convex") {
    c.domain = unit_square(0.04);
    c.datum = "random_smooth";
    c.count = 5;
    c.params = {{"T", 0.05}, {"dt", 2e-4}};
    c.tol = {{"mono_per_h", 10.0}, {"refinement", 0.5}};
  } else if (experiment == "fisher_nonconvex") {
    c.domain = star;
    c.datum = "bump";
    c.count = 3;
    c.samples = 16;
    c.params = {{"rel_step", 0.02}, {"prefilter", 0.01}};
    c.tol = {{"bound", 0.02}, {"control_alpha", 2.0}};
  } else if (experiment == "exact_chain_rule") {
    c.domain = unit_square(0.02);
    c.datum = "eigenfunction";
    c.params = {{"T", 0.05}, {"dt", 1e-4}};
    c.tol = {{"chain_rule", 0.02}, {"ede", 0.02}};
  } else if (experiment == "upper_gradient" || experiment == "edi") {
    c.domain = unit_square(0.05);
    c.datum = "eigenfunction";
    c.params = {{"T", 0.05}, {"spacing", 0.005}, {"dt", 1e-4}, {"eps_factor", 2.0}, {"jko_tau", 2.5e-3}};
    if (experiment == "upper_gradient") {
      c.params["speed_time"] = 0.02;
      c.params["jko_eps_factor"] = 1.0;
      c.tol = {{"upper_gradient", 0.10}, {"tightness", 0.10}, {"metric_speed", 0.10}};
    } else {
      c.params["jko_h"] = 0.1;
      c.params["jko_eps"] = 0.005;
      c.tol = {{"edi", 0.10}, {"ede", 0.10}, {"jko_step", 1e-6}, {"jko_edi", 0.05}};
    }
  } else if (experiment == "wasserstein_contraction") {
    c.domain = with_h(star, 0.01);
    c.count = 2;
    c.params = {{"convex_h", 0.05}, {"convex_eps_factor", 2.0}, {"dt", 1e-4},      {"region", 0.15},
                {"eps_factor", 4.0}, {"sinkhorn_tol", 1e-7},     {"rel_step", 0.05}};
    c.tol = {{"contraction", 0.02}, {"bound", 0.02}};
  } else if (experiment == "gradient_estimate") {
    c.domain = with_h(star, 0.01);
    c.count = 10;
    c.samples = 14;
    c.params = {{"convex_h", 0.01}, {"rel_step", 0.05}};
    c.tol = {{"ge", 5e-2}, {"kuwada", 0.30}};
  } else if (experiment == "porous_fisher") {
    c.domain = star;
    c.datum = "bump";
    c.samples = 16;
    c.params = {{"m", 1.25}, {"m_low", 1.01}, {"m_high", 1.49}, {"rel_step", 0.02}};
    c.tol = {{"fit_residual", 0.05}};
  } else if (experiment == "transport_oracle") {
    c.domain = unit_square(0.05);
    c.count = 20;
    c.params = {{"max_points", 6}, {"eps_factor", 1e-3}, {"sinkhorn_tol", 1e-6}, {"max_iters", 200000}};
    c.tol = {{"relative", 0.01}};
  } else if (experiment == "jko_convergence") {
    c.domain = unit_square(0.02);
    c.datum = "eigenfunction";
    c.params = {{"T", 0.05}, {"tau", 2.5e-3}, {"eps_per_tau2", 160.0}, {"ref_dt", 1e-5}};
    c.tol = {{"l1", 0.05}, {"improvement", 1.5}, {"fixed_point", 1e-10}};
  } else {
    throw ValidationError("unknown experiment '" + experiment + "'");
  }
  return c;
}

const std::vector<ExperimentInfo>& experiments() {
  static const std::vector<ExperimentInfo> list{
      {"heat_validation", "heat solver against the analytic eigenfunction solution, with refinement", heat_validation},
      {"fisher_convex", "Fisher information is non-increasing along the heat flow on a convex domain", fisher_convex},
      {"fisher_nonconvex", "Fisher information grows at most like exp(4S sqrt(t/pi)) on a non-convex domain",
       fisher_nonconvex},
      {"exact_chain_rule", "dH/dt equals the pairing of grad log rho with the momentum; energy balance", exact_chain_rule},
      {"upper_gradient", "|dH| <= sqrt(I) |mu'| on heat and JKO curves; metric speed equals sqrt(I)", upper_gradient},
      {"edi", "energy dissipation inequality on heat and JKO curves; JKO one-step inequality", edi},
      {"wasserstein_contraction", "W(P_t mu, P_t nu) <= exp(2S sqrt(t/pi) + O(t)) W(mu, nu)", wasserstein_contraction},
      {"gradient_estimate", "|grad P_t f|^2 <= exp(4S sqrt(t/pi) + O(t)) P_t |grad f|^2, and duality with contraction",
       gradient_estimate},
      {"porous_fisher", "porous-medium Fisher information I_m admits an alpha sqrt(t) + beta t fit", porous_fisher},
      {"transport_oracle", "extrapolated Sinkhorn against permutation brute force", transport_oracle},
      {"jko_convergence", "entropic JKO converges to the heat flow as tau shrinks", jko_convergence},
  };
  return list;
}

namespace {

Report run_as(const std::string& name, ExperimentConfig cfg) {
  cfg.experiment = name;
  return run_experiment(cfg);
}

}  // namespace

Report exp_heat_validation(const ExperimentConfig& cfg) { return run_as("heat_validation", cfg); }
Report exp_fisher_convex(const ExperimentConfig& cfg) { return run_as("fisher_convex", cfg); }
Report exp_fisher_nonconvex(const ExperimentConfig& cfg) { return run_as("fisher_nonconvex", cfg); }
Report exp_upper_gradient(const ExperimentConfig& cfg) { return run_as("upper_gradient", cfg); }
Report exp_exact_chain_rule(const ExperimentConfig& cfg) { return run_as("exact_chain_rule", cfg); }
Report exp_edi(const ExperimentConfig& cfg) { return run_as("edi", cfg); }
Report exp_wasserstein_contraction(const ExperimentConfig& cfg) { return run_as("wasserstein_contraction", cfg); }
Report exp_gradient_estimate(const ExperimentConfig& cfg) { return run_as("gradient_estimate", cfg); }
Report exp_porous_fisher(const ExperimentConfig& cfg) { return run_as("porous_fisher", cfg); }
Report exp_transport_oracle(const ExperimentConfig& cfg) { return run_as("transport_oracle", cfg); }
Report exp_jko_convergence(const ExperimentConfig& cfg) { return run_as("jko_convergence", cfg); }

}  // namespace fisherflow
