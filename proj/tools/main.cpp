#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "fisherflow/data.hpp"
#include "fisherflow/errors.hpp"
#include "fisherflow/heat.hpp"
#include "fisherflow/jko.hpp"
#include "fisherflow/verify.hpp"

namespace fs = std::filesystem;
using namespace fisherflow;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { ok = 0, verdict_failed = 1, usage = 2, numeric = 3 };

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

// --out wins; otherwise FISHERFLOW_OUT (or ./runs) joined with `leaf`.
fs::path output_dir(const std::string& flag, const std::string& leaf) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("FISHERFLOW_OUT");
  return fs::path(env && *env ? env : "runs") / leaf;
}

struct Manifest {
  nlohmann::json j;
  Manifest(std::string command, const std::string& config, const fs::path& out, std::uint64_t seed) {
    j = {{"command", std::move(command)}, {"config", config},   {"output_dir", out.string()},
         {"seed", seed},                  {"version", kVersion}, {"started_at", utc_now()}};
  }
  void finish(const fs::path& out, int code) {
    j["finished_at"] = utc_now();
    j["exit_code"] = code;
    write_json(out / "manifest.json", j);
  }
};

// ---------------------------------------------------------------------------

struct MeshArgs {
  std::string spec, out;
};

int cmd_mesh(const MeshArgs& a) {
  const DomainSpec spec = DomainSpec::from_json(read_json(a.spec));
  const fs::path out = output_dir(a.out, "mesh");
  fs::create_directories(out);
  Manifest manifest("mesh", a.spec, out, 0);
  const MeshPtr mesh = build_mesh(spec);
  write_json(out / "mesh.json", mesh->to_json());
  nlohmann::json curv = boundary_curvature(spec).to_json();
  curv["mesh_checksum"] = mesh->checksum();
  curv["domain"] = spec.to_json();
  write_json(out / "curvature.json", curv);
  std::printf("mesh %s: %d vertices, %d triangles, S = %.6g\n", mesh->checksum().c_str(), mesh->num_vertices(),
              mesh->num_triangles(), curv["S"].get<double>());
  manifest.finish(out, Exit::ok);
  return Exit::ok;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string exp, spec, config, out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool list = false;
};

// A config file is either one experiment's overrides or an object keyed by
// experiment name.
ExperimentConfig effective_config(const std::string& name, const VerifyArgs& a, const nlohmann::json& file) {
  ExperimentConfig cfg = default_config(name);
  if (file.is_object()) {
    if (file.contains(name)) {
      cfg = ExperimentConfig::from_json(file.at(name), cfg);
    } else if (!file.empty() && !find_experiment(file.begin().key())) {
      cfg = ExperimentConfig::from_json(file, cfg);
    }
  }
  if (!a.spec.empty()) cfg.domain = DomainSpec::from_json(read_json(a.spec));
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

struct Outcome {
  std::optional<Report> report;
  int code = Exit::ok;
  std::string error;
};

int cmd_verify(const VerifyArgs& a) {
  if (a.list) {
    for (const ExperimentInfo& e : experiments()) std::printf("%-24s %s\n", e.name.c_str(), e.claim.c_str());
    return Exit::ok;
  }
  std::vector<std::string> names;
  if (a.exp == "all") {
    for (const ExperimentInfo& e : experiments()) names.push_back(e.name);
  } else if (find_experiment(a.exp)) {
    names.push_back(a.exp);
  } else {
    throw ValidationError("unknown experiment '" + a.exp + "' (see --list)");
  }
  if (a.jobs < 1) throw ValidationError("--jobs must be positive");
  const nlohmann::json file = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
  std::vector<ExperimentConfig> configs;
  for (const std::string& n : names) configs.push_back(effective_config(n, a, file));

  const fs::path out = output_dir(a.out, "verify");
  fs::create_directories(out);
  Manifest manifest("verify", a.config, out, configs.front().seed);
  manifest.j["experiments"] = names;

  std::vector<Outcome> outcomes(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      Outcome& o = outcomes[i];
      try {
        o.report = run_experiment(configs[i]);
        o.report->write(out);
        o.code = o.report->passed() ? Exit::ok : Exit::verdict_failed;
      } catch (const ValidationError& e) {
        o.code = Exit::usage;
        o.error = e.what();
      } catch (const std::exception& e) {
        o.code = Exit::numeric;
        o.error = e.what();
      }
    }
  };
  const int threads = std::min<int>(a.jobs, static_cast<int>(configs.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int code = Exit::ok;
  std::printf("%-24s %-32s %-6s %14s %14s\n", "experiment", "verdict", "result", "measured", "threshold");
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const Outcome& o = outcomes[i];
    if (!o.report) {
      std::printf("%-24s %-32s %-6s %s\n", names[i].c_str(), "-", "ERROR", o.error.c_str());
    } else {
      for (const Verdict& v : o.report->verdicts) {
        const char* result = !v.asserted ? "info" : v.pass ? "pass" : "FAIL";
        std::printf("%-24s %-32s %-6s %14.6g %14.6g\n", names[i].c_str(), v.name.c_str(), result, v.measured,
                    v.threshold);
      }
    }
    code = std::max(code, o.code);
  }
  manifest.finish(out, code);
  return code;
}

// ---------------------------------------------------------------------------

struct FlowArgs {
  std::string spec, flow = "heat", datum = "eigenfunction", out;
  double T = 0.05;
  std::optional<double> dt, tau, eps;
  double every = 0.0;
  std::uint64_t seed = 7;
};

int cmd_flow(const FlowArgs& a) {
  if (a.flow != "heat" && a.flow != "jko") throw ValidationError("--flow must be heat or jko");
  if (a.flow == "heat" && (a.tau || a.eps)) throw ValidationError("--tau and --eps apply to --flow jko only");
  if (a.flow == "jko" && a.dt) throw ValidationError("--dt applies to --flow heat only");
  if (!(a.T > 0.0)) throw ValidationError("--T must be positive");
  const DomainSpec spec = a.spec.empty() ? DomainSpec::rectangle(1.0, 1.0, 0.05) : DomainSpec::from_json(read_json(a.spec));
  const fs::path out = output_dir(a.out, "flow");

  const MeshPtr mesh = build_mesh(spec);
  Density rho0 = Density::uniform(mesh);
  if (a.datum == "eigenfunction") {
    rho0 = eigenfunction_density(mesh);
  } else if (a.datum == "bump") {
    rho0 = bump_density(mesh, concave_anchor(spec, 0.1), 0.1);
  } else if (a.datum == "random_smooth") {
    rho0 = random_smooth_density(mesh, a.seed);
  } else if (a.datum != "uniform") {
    throw ValidationError("unknown --datum '" + a.datum + "'");
  }

  Curve curve;
  nlohmann::json settings;
  if (a.flow == "heat") {
    const double dt = a.dt.value_or(1e-4);
    const double every = a.every > 0.0 ? a.every : a.T / 10;
    curve = HeatOperator(mesh).evolve(rho0, a.T, dt, uniform_times(a.T, every));
    settings = {{"dt", dt}, {"every", every}};
  } else {
    JkoConfig jc;
    if (a.tau) jc.tau = *a.tau;
    jc.epsilon = a.eps.value_or(160.0 * jc.tau * jc.tau);
    jc.validate();
    const CostTable cost = CostTable::from_mesh(*mesh);
    curve = jko_curve(rho0, a.T, cost, jc);
    settings = jc.to_json();
  }
  fs::create_directories(out);
  Manifest manifest("flow", a.spec, out, a.seed);
  manifest.j["flow"] = {{"kind", a.flow}, {"T", a.T}, {"datum", a.datum}, {"settings", settings}};
  write_json(out / "mesh.json", mesh->to_json());
  write_json(out / "curve.json", curve.to_json());
  std::printf("%s curve: %d samples on mesh %s\n", a.flow.c_str(), curve.size(), mesh->checksum().c_str());
  manifest.finish(out, Exit::ok);
  return Exit::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fisherflow: heat flow, Fisher information and optimal transport on planar domains"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  MeshArgs ma;
  auto* mesh = app.add_subcommand("mesh", "build a mesh and curvature report from a domain spec");
  mesh->add_option("--spec", ma.spec, "domain spec JSON")->required();
  mesh->add_option("--out", ma.out, "output directory");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "run verification experiments");
  verify->add_option("--exp", va.exp, "experiment name or 'all'");
  verify->add_option("--spec", va.spec, "domain spec JSON overriding the experiment's domain");
  verify->add_option("--config", va.config, "experiment config JSON");
  verify->add_option("--seed", va.seed, "random seed");
  verify->add_option("--jobs", va.jobs, "concurrent experiments")->default_val(1);
  verify->add_option("--out", va.out, "output directory");
  verify->add_flag("--list", va.list, "list experiments");

  FlowArgs fa;
  auto* flow = app.add_subcommand("flow", "run a heat or JKO evolution and export the curve");
  flow->add_option("--flow", fa.flow, "heat or jko");
  flow->add_option("--spec", fa.spec, "domain spec JSON (default: unit square, h = 0.05)");
  flow->add_option("--T", fa.T, "final time");
  flow->add_option("--dt", fa.dt, "heat time step");
  flow->add_option("--tau", fa.tau, "JKO step");
  flow->add_option("--eps", fa.eps, "JKO entropic regularization");
  flow->add_option("--every", fa.every, "heat sampling interval (default T / 10)");
  flow->add_option("--datum", fa.datum, "eigenfunction, bump, random_smooth or uniform");
  flow->add_option("--seed", fa.seed, "seed for random_smooth");
  flow->add_option("--out", fa.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::usage;
  }
  try {
    if (*mesh) return cmd_mesh(ma);
    if (*verify) {
      if (!va.list && va.exp.empty()) throw ValidationError("verify: --exp or --list is required");
      return cmd_verify(va);
    }
    return cmd_flow(fa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::numeric;
  }
}
