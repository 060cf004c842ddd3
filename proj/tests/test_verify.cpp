#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fisherflow/errors.hpp"
#include "fisherflow/verify.hpp"

using namespace fisherflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("fisherflow_test_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig small_oracle() {
  ExperimentConfig c = default_config("transport_oracle");
  c.count = 4;
  c.params["max_points"] = 4;
  return c;
}

}  // namespace

TEST_SUITE("verify") {

TEST_CASE("registry and defaults") {
  REQUIRE(experiments().size() == 11);
  for (const ExperimentInfo& e : experiments()) {
    CAPTURE(e.name);
    CHECK(find_experiment(e.name) == &e);
    CHECK(!e.claim.empty());
    const ExperimentConfig c = default_config(e.name);
    CHECK(c.experiment == e.name);
    CHECK_NOTHROW(c.validate());
    CHECK(c.t_min > 0.0);
  }
  CHECK(find_experiment("nosuch") == nullptr);
  CHECK_THROWS_AS(default_config("nosuch"), ValidationError);
  ExperimentConfig c = default_config("fisher_convex");
  c.experiment = "nosuch";
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
}

TEST_CASE("config validation and overlay") {
  const ExperimentConfig base = default_config("fisher_nonconvex");
  ExperimentConfig c = base;
  c.t_min = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = base;
  c.t_max = c.t_min;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = base;
  c.tol["bound"] = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = base;
  c.samples = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  const auto j = nlohmann::json::parse(R"({"seed": 11, "t_max": 0.02, "params": {"rel_step": 0.05},
                                          "tol": {"bound": 0.1}, "domain": {"kind": "polar_star", "a": 0.3, "h": 0.05}})");
  c = ExperimentConfig::from_json(j, base);
  CHECK(c.seed == 11);
  CHECK(c.t_max == 0.02);
  CHECK(c.param("rel_step") == 0.05);
  CHECK(c.param("prefilter") == base.param("prefilter"));
  CHECK(c.tolerance("bound") == 0.1);
  CHECK(c.domain.a == 0.3);
  CHECK(c.to_json()["params"]["rel_step"] == 0.05);

  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"bogus": 1})"), base), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"params": {"bogus": 1}})"), base),
                  ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"t_min": "x"})"), base), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::parse(R"({"experiment": "edi"})"), base),
                  ValidationError);
  CHECK_THROWS_AS(c.param("missing"), ValidationError);
}

TEST_CASE("report schema and atomic files") {
  Report r;
  r.experiment = "demo";
  r.config = {{"seed", 7}};
  r.mesh_checksum = "abc";
  r.series.push_back({"s", {0.1, 0.2}, {1.0 / 3.0, 2.0}});
  FitResult f;
  f.alpha = 1.5;
  r.fits.emplace_back("d0", f);
  r.governing_fit = "d0";
  r.add("ok", true, 0.1, 0.2);
  r.add("observed", false, 1.0, 0.0, false);
  CHECK(r.passed());
  const auto j = r.to_json();
  for (const char* key : {"experiment", "config", "mesh_checksum", "series", "fit", "fits", "verdicts", "timing"}) {
    CAPTURE(key);
    CHECK(j.contains(key));
  }
  CHECK(j["fit"]["alpha"] == 1.5);
  CHECK(j["verdicts"][0]["threshold"] == 0.2);
  CHECK(j["verdicts"][1]["asserted"] == false);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("series,t,value\n", 0) == 0);
  CHECK(csv.find("s,0.10000000000000001,0.33333333333333331\n") != std::string::npos);

  const fs::path dir = scratch_dir("report");
  r.write(dir);
  CHECK(nlohmann::json::parse(slurp(dir / "demo.json"))["mesh_checksum"] == "abc");
  CHECK(slurp(dir / "demo.csv") == csv);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    CHECK(e.path().extension() != ".tmp");
    ++files;
  }
  CHECK(files == 2);
  r.add("bad", false, 2.0, 1.0);
  CHECK(!r.passed());
  fs::remove_all(dir);
}

TEST_CASE("runs are deterministic apart from timing") {
  const Report a = run_experiment(small_oracle());
  const Report b = run_experiment(small_oracle());
  auto ja = a.to_json(), jb = b.to_json();
  CHECK(ja["timing"]["wall_time_s"].get<double>() >= 0.0);
  ja.erase("timing");
  jb.erase("timing");
  CHECK(ja.dump() == jb.dump());
  CHECK(a.to_csv() == b.to_csv());
  CHECK(a.passed());
  CHECK(ja["config"]["count"] == 4);

  ExperimentConfig other = small_oracle();
  other.seed = 8;
  CHECK(run_experiment(other).to_csv() != a.to_csv());
}

TEST_CASE("domain preconditions") {
  ExperimentConfig c = default_config("fisher_nonconvex");
  c.domain = DomainSpec::rectangle(1, 1, 0.1);
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  c = default_config("fisher_convex");
  c.domain = DomainSpec::polar_star(1, 0.5, 3, 0.1);
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  c = default_config("porous_fisher");
  c.params["m"] = 1.6;
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  c = default_config("fisher_convex");
  c.datum = "nosuch";
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
}

TEST_CASE("uniform datum has zero Fisher information") {
  ExperimentConfig c = default_config("fisher_convex");
  c.datum = "uniform";
  c.count = 1;
  c.domain.h = 0.1;
  c.params["T"] = 0.01;
  const Report r = run_experiment(c);
  for (const Verdict& v : r.verdicts) {
    CAPTURE(v.name);
    CAPTURE(v.measured);
    CHECK((v.pass || !v.asserted));
  }
  CHECK(!r.notes.empty());
  for (const Series& s : r.series) {
    for (double v : s.value) CHECK(v <= 1e-20);
  }

  c = default_config("fisher_nonconvex");
  c.datum = "uniform";
  c.domain.h = 0.1;
  c.count = 1;
  const Report n = run_experiment(c);
  CHECK(!n.notes.empty());
  CHECK(n.passed());
}

TEST_CASE("negated chain rule fails on its own") {
  ExperimentConfig c = default_config("exact_chain_rule");
  c.domain.h = 0.05;
  c.params["T"] = 0.01;
  const Report r = run_experiment(c);
  CHECK(r.passed());
  bool found = false;
  for (const Verdict& v : r.verdicts) {
    if (v.name == "negated_momenta_fail") {
      found = true;
      CHECK(v.measured > 1.5);
    }
  }
  CHECK(found);
}

}  // TEST_SUITE
