// Acceptance gate: runs the CLI end to end and checks criteria 1-12, one line
// per criterion. Exit status is 0 iff every criterion passes.
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fisherflow/jko.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fisherflow;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + FISHERFLOW_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Run {
  int code = -1;
  std::map<std::string, json> reports;
  std::map<std::string, std::string> csv;
};

Run verify_all(const fs::path& out, int jobs) {
  Run r;
  r.code = cli("verify --exp all --seed 7 --jobs " + std::to_string(jobs) + " --out \"" + out.string() + "\"",
               out.string() + ".log");
  for (const auto& e : fs::directory_iterator(out)) {
    const std::string stem = e.path().stem().string();
    if (e.path().extension() == ".json" && stem != "manifest") r.reports[stem] = json::parse(slurp(e.path()));
    if (e.path().extension() == ".csv") r.csv[stem] = slurp(e.path());
  }
  return r;
}

struct Check {
  bool pass = true;
  std::string detail;
  void need(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
    pass = pass && ok;
  }
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

const json* verdict(const Run& run, const std::string& exp, const std::string& name) {
  const auto it = run.reports.find(exp);
  if (it == run.reports.end()) return nullptr;
  for (const json& v : it->second["verdicts"]) {
    if (v["name"] == name) return &v;
  }
  return nullptr;
}

// Requires the named verdict to exist and pass; reports measured vs threshold.
void expect(Check& c, const Run& run, const std::string& exp, const std::string& name) {
  const json* v = verdict(run, exp, name);
  if (!v) {
    c.need(false, exp + "." + name + " missing");
    return;
  }
  c.need((*v)["pass"].get<bool>(),
         name + " " + num((*v)["measured"].get<double>()) + " vs " + num((*v)["threshold"].get<double>()));
}

// Largest inward curvature of r = 1 + 0.5 cos 3θ by finite differences.
double oracle_S() {
  double S = 0.0;
  for (int i = 0; i < 20000; ++i) S = std::max(S, -oracle::fd_curvature(1.0, 0.5, 3, 2 * std::numbers::pi * i / 20000));
  return S;
}

double toy_jko_l1() {
  auto mesh = std::make_shared<const TriMesh>(std::vector<Vec2>{{0, 0}, {0.3, 0}, {0.09, 0.24}},
                                              std::vector<Triangle>{{0, 1, 2}});
  const CostTable cost = CostTable::from_mesh(*mesh);
  const Eigen::VectorXd& m = mesh->lumped_mass();
  const std::array<double, 3> nu{0.6, 0.25, 0.15};
  JkoConfig jc;
  jc.tau = 0.1;
  jc.epsilon = 0.05;
  const Density out = jko_step(Density(mesh, Eigen::Vector3d(nu[0] / m[0], nu[1] / m[1], nu[2] / m[2])), cost, jc);
  oracle::ToyJko toy;
  for (int i = 0; i < 3; ++i) {
    toy.m[i] = m[i];
    for (int j = 0; j < 3; ++j) toy.C[i][j] = (mesh->vertices()[i] - mesh->vertices()[j]).squaredNorm();
  }
  toy.eps = jc.epsilon;
  toy.tau = jc.tau;
  const auto expect = toy.step(nu, 1e-4);
  double l1 = 0.0;
  for (int i = 0; i < 3; ++i) l1 += std::abs(m[i] * out[i] - expect[i]);
  return l1;
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "fisherflow_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  std::printf("running verify --exp all --seed 7 twice (this takes a few minutes)\n");
  std::fflush(stdout);
  const Run a = verify_all(root / "a", 1);
  const Run b = verify_all(root / "b", 2);

  std::vector<std::pair<std::string, Check>> rows;
  auto row = [&](const std::string& title, const std::function<void(Check&)>& body) {
    Check c;
    try {
      body(c);
    } catch (const std::exception& e) {
      c.need(false, std::string("exception: ") + e.what());
    }
    rows.emplace_back(title, c);
  };

  row("heat solver validation", [&](Check& c) {
    expect(c, a, "heat_validation", "max_error");
    expect(c, a, "heat_validation", "refinement_ratio");
  });
  row("convex Fisher decay", [&](Check& c) {
    expect(c, a, "fisher_convex", "monotone_h");
    expect(c, a, "fisher_convex", "monotone_h/2");
    expect(c, a, "fisher_convex", "violation_shrinks");
  });
  row("non-convex Fisher growth", [&](Check& c) {
    const double S = oracle_S();
    c.need(std::abs(S - 16.0) <= 0.1, "oracle S " + num(S));
    const json* rate = verdict(a, "fisher_nonconvex", "rate");
    if (rate) {
      const double cap = 4 * S / std::sqrt(std::numbers::pi) * 1.25;
      c.need(std::abs((*rate)["threshold"].get<double>() - cap) <= 0.5, "cap " + num(cap));
    }
    expect(c, a, "fisher_nonconvex", "rate");
    expect(c, a, "fisher_nonconvex", "bound");
    expect(c, a, "fisher_nonconvex", "control_rate");
    const double wall = a.reports.count("fisher_nonconvex")
                            ? a.reports.at("fisher_nonconvex")["timing"]["wall_time_s"].get<double>()
                            : 1e9;
    c.need(wall <= 900.0, "runtime " + num(wall) + " s");
  });
  row("exact chain rule and EDE", [&](Check& c) {
    expect(c, a, "exact_chain_rule", "ede");
    expect(c, a, "exact_chain_rule", "negated_momenta_fail");
  });
  row("upper gradient", [&](Check& c) {
    expect(c, a, "upper_gradient", "heat_upper_gradient");
    expect(c, a, "upper_gradient", "heat_tightness");
    expect(c, a, "upper_gradient", "jko_upper_gradient");
  });
  row("metric speed", [&](Check& c) { expect(c, a, "upper_gradient", "metric_speed_vs_sqrt_fisher"); });
  row("transport oracle", [&](Check& c) {
    expect(c, a, "transport_oracle", "brute_force");
    c.need(a.reports.count("transport_oracle") && a.reports.at("transport_oracle")["config"]["count"] == 20,
           "20 supports");
  });
  row("Wasserstein contraction", [&](Check& c) {
    expect(c, a, "wasserstein_contraction", "convex_contraction");
    expect(c, a, "wasserstein_contraction", "rate");
  });
  row("gradient estimate", [&](Check& c) {
    expect(c, a, "gradient_estimate", "convex_pointwise");
    expect(c, a, "gradient_estimate", "rate");
    expect(c, a, "gradient_estimate", "kuwada");
  });
  row("JKO", [&](Check& c) {
    expect(c, a, "edi", "jko_step_inequality");
    expect(c, a, "jko_convergence", "l1_at_tau");
    expect(c, a, "jko_convergence", "l1_improvement");
    const double l1 = toy_jko_l1();
    c.need(l1 <= 1e-3, "toy oracle " + num(l1));
  });
  row("porous medium Fisher", [&](Check& c) {
    expect(c, a, "porous_fisher", "fit_m1.25");
    expect(c, a, "porous_fisher", "out_of_range_rejected");
    for (double m : {1.6, 1.0}) {
      const fs::path cfg = root / "porous.json";
      std::ofstream(cfg) << "{\"params\": {\"m\": " << m << "}}";
      const int code = cli("verify --exp porous_fisher --config \"" + cfg.string() + "\" --out \"" +
                               (root / "porous").string() + "\"",
                           root / "porous.log");
      c.need(code == 2, "m=" + num(m) + " exit " + std::to_string(code));
    }
  });
  row("determinism", [&](Check& c) {
    c.need(a.code == 0 && b.code == 0, "exit codes " + std::to_string(a.code) + "/" + std::to_string(b.code));
    c.need(a.reports.size() == 11 && a.reports.size() == b.reports.size(), std::to_string(a.reports.size()) + " reports");
    bool same = a.csv == b.csv;
    for (const auto& [name, ja] : a.reports) {
      if (!b.reports.count(name)) {
        same = false;
        continue;
      }
      json x = ja, y = b.reports.at(name);
      x.erase("timing");
      y.erase("timing");
      same = same && x == y;
    }
    c.need(same, "reports identical modulo timing");
  });

  int failed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [title, c] = rows[i];
    std::printf("[%s] %2zu %-26s %s\n", c.pass ? "PASS" : "FAIL", i + 1, title.c_str(), c.detail.c_str());
    failed += !c.pass;
  }
  std::printf("%zu criteria, %d failed\n", rows.size(), failed);
  if (failed == 0) fs::remove_all(root);
  return failed == 0 ? 0 : 1;
}
