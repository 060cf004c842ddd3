#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fisherflow/fit.hpp"
#include "fisherflow/mesh.hpp"

namespace fisherflow {

/// Settings for one experiment. `params` holds numeric knobs (mesh sizes,
/// steps, regularization factors) and `tol` the verdict tolerances; both are
/// keyed by name and seeded from the experiment's defaults.
struct ExperimentConfig {
  std::string experiment;
  DomainSpec domain;
  std::string datum;  // initial-data family id
  int count = 1;      // number of seeded data
  double t_min = 1e-4, t_max = 1e-2;
  int samples = 12;
  double slack = 0.25;  // multiplicative slack on fitted-rate caps
  std::map<std::string, double> params;
  std::map<std::string, double> tol;
  std::uint64_t seed = 7;

  /// Throws ValidationError on t_min <= 0, an empty window, too few samples,
  /// nonpositive tolerances or negative slack.
  void validate() const;
  double param(const std::string& key) const;
  double tolerance(const std::string& key) const;

  nlohmann::json to_json() const;
  /// Overlays the fields present in `j` on `base`. Unknown keys are errors.
  static ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base);
};

struct Verdict {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double threshold = 0.0;
  bool asserted = true;  // informative observations do not gate the exit code
};

/// One diagnostic time series; becomes rows of the CSV.
struct Series {
  std::string name;
  std::vector<double> t, value;
};

struct Report {
  std::string experiment;
  nlohmann::json config;
  std::string mesh_checksum;
  std::map<std::string, std::string> meshes;  // label -> checksum, all meshes used
  std::vector<Series> series;
  std::vector<std::pair<std::string, FitResult>> fits;
  std::string governing_fit;  // name of the fit the rate verdict uses
  std::vector<Verdict> verdicts;
  std::vector<std::string> notes;
  double wall_time = 0.0;  // seconds
  std::string started_at;  // UTC ISO 8601

  bool passed() const;
  void add(std::string name, bool pass, double measured, double threshold, bool asserted = true);

  /// Keys: experiment, config, mesh_checksum, meshes, series, fit, fits,
  /// verdicts, notes, passed, timing {wall_time_s, started_at}.
  nlohmann::json to_json() const;
  /// Header "series,t,value", one row per sample, %.17g.
  std::string to_csv() const;
  /// Writes <dir>/<experiment>.json and .csv through temporary files and
  /// renames, so readers never see partial reports.
  void write(const std::filesystem::path& dir) const;
};

using ExperimentFn = std::function<Report(const ExperimentConfig&)>;

struct ExperimentInfo {
  std::string name;
  std::string claim;  // one-line statement of what is checked
  ExperimentFn run;
};

/// Registered experiments in the order `all` runs them.
const std::vector<ExperimentInfo>& experiments();
/// nullptr when unknown.
const ExperimentInfo* find_experiment(const std::string& name);
/// Throws ValidationError for an unknown name.
ExperimentConfig default_config(const std::string& experiment);

/// Validates cfg, runs it and stamps timing and the config echo.
Report run_experiment(const ExperimentConfig& cfg);

Report exp_heat_validation(const ExperimentConfig& cfg);
Report exp_fisher_convex(const ExperimentConfig& cfg);
Report exp_fisher_nonconvex(const ExperimentConfig& cfg);
Report exp_upper_gradient(const ExperimentConfig& cfg);
Report exp_exact_chain_rule(const ExperimentConfig& cfg);
Report exp_edi(const ExperimentConfig& cfg);
Report exp_wasserstein_contraction(const ExperimentConfig& cfg);
Report exp_gradient_estimate(const ExperimentConfig& cfg);
Report exp_porous_fisher(const ExperimentConfig& cfg);
Report exp_transport_oracle(const ExperimentConfig& cfg);
Report exp_jko_convergence(const ExperimentConfig& cfg);

}  // namespace fisherflow
