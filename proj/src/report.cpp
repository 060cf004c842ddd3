#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "fisherflow/errors.hpp"
#include "fisherflow/verify.hpp"

namespace fisherflow {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("report: cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw ValidationError("report: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void overlay_map(std::map<std::string, double>& dst, const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw ValidationError("config: '" + what + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!dst.count(key)) throw ValidationError("config: unknown " + what + " key '" + key + "'");
    if (!value.is_number()) throw ValidationError("config: " + what + "." + key + " must be a number");
    dst[key] = value.get<double>();
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  domain.validate();
  if (!(t_min > 0.0)) throw ValidationError("config: t_min must be positive");
  if (!(t_max > t_min)) throw ValidationError("config: t_max must exceed t_min");
  if (samples < 2) throw ValidationError("config: need at least two samples");
  if (count < 1) throw ValidationError("config: count must be positive");
  if (!(slack >= 0.0)) throw ValidationError("config: slack must be nonnegative");
  for (const auto& [key, value] : tol) {
    if (!(value > 0.0)) throw ValidationError("config: tolerance '" + key + "' must be positive");
  }
  for (const auto& [key, value] : params) {
    if (!std::isfinite(value)) throw ValidationError("config: parameter '" + key + "' must be finite");
  }
}

double ExperimentConfig::param(const std::string& key) const {
  const auto it = params.find(key);
  if (it == params.end()) throw ValidationError("config: missing parameter '" + key + "'");
  return it->second;
}

double ExperimentConfig::tolerance(const std::string& key) const {
  const auto it = tol.find(key);
  if (it == tol.end()) throw ValidationError("config: missing tolerance '" + key + "'");
  return it->second;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"experiment", experiment}, {"domain", domain.to_json()}, {"datum", datum}, {"count", count},
          {"t_min", t_min},           {"t_max", t_max},             {"samples", samples}, {"slack", slack},
          {"params", params},         {"tol", tol},                 {"seed", seed}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, ExperimentConfig base) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "experiment") {
        if (value.get<std::string>() != base.experiment) {
          throw ValidationError("config: file is for experiment '" + value.get<std::string>() + "'");
        }
      } else if (key == "domain") {
        base.domain = DomainSpec::from_json(value);
      } else if (key == "datum") {
        base.datum = value.get<std::string>();
      } else if (key == "count") {
        base.count = value.get<int>();
      } else if (key == "t_min") {
        base.t_min = value.get<double>();
      } else if (key == "t_max") {
        base.t_max = value.get<double>();
      } else if (key == "samples") {
        base.samples = value.get<int>();
      } else if (key == "slack") {
        base.slack = value.get<double>();
      } else if (key == "params") {
        overlay_map(base.params, value, "params");
      } else if (key == "tol") {
        overlay_map(base.tol, value, "tol");
      } else if (key == "seed") {
        base.seed = value.get<std::uint64_t>();
      } else {
        throw ValidationError("config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return base;
}

bool Report::passed() const {
  for (const Verdict& v : verdicts) {
    if (v.asserted && !v.pass) return false;
  }
  return true;
}

void Report::add(std::string name, bool pass, double measured, double threshold, bool asserted) {
  verdicts.push_back({std::move(name), pass, measured, threshold, asserted});
}

nlohmann::json Report::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["config"] = config;
  j["mesh_checksum"] = mesh_checksum;
  j["meshes"] = meshes;
  j["series"] = nlohmann::json::array();
  for (const Series& s : series) j["series"].push_back({{"name", s.name}, {"t", s.t}, {"value", s.value}});
  j["fit"] = nullptr;
  j["fits"] = nlohmann::json::array();
  for (const auto& [name, fit] : fits) {
    nlohmann::json f = fit.to_json();
    f["name"] = name;
    if (name == governing_fit) j["fit"] = f;
    j["fits"].push_back(f);
  }
  j["verdicts"] = nlohmann::json::array();
  for (const Verdict& v : verdicts) {
    j["verdicts"].push_back({{"name", v.name},
                             {"pass", v.pass},
                             {"measured", v.measured},
                             {"threshold", v.threshold},
                             {"asserted", v.asserted}});
  }
  j["notes"] = notes;
  j["passed"] = passed();
  j["timing"] = {{"wall_time_s", wall_time}, {"started_at", started_at}};
  return j;
}

std::string Report::to_csv() const {
  std::string out = "series,t,value\n";
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.t.size(); ++i) out += s.name + "," + fmt17(s.t[i]) + "," + fmt17(s.value[i]) + "\n";
  }
  return out;
}

void Report::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_atomic(dir / (experiment + ".json"), to_json().dump(2) + "\n");
  write_atomic(dir / (experiment + ".csv"), to_csv());
}

const ExperimentInfo* find_experiment(const std::string& name) {
  for (const ExperimentInfo& e : experiments()) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Report run_experiment(const ExperimentConfig& cfg) {
  const ExperimentInfo* info = find_experiment(cfg.experiment);
  if (!info) throw ValidationError("unknown experiment '" + cfg.experiment + "'");
  cfg.validate();
  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  Report r = info->run(cfg);
  r.experiment = cfg.experiment;
  r.config = cfg.to_json();
  r.started_at = started;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace fisherflow
