#pragma once

// Orchestration behind the command-line tool: forecast, assemble, solve,
// validate, report, and the benchmark sweep. Every output except the
// `metadata` block of summary.json is a pure function of the inputs and seed.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ccopf/errors.hpp"
#include "ccopf/forecast.hpp"
#include "ccopf/grid.hpp"
#include "ccopf/interior_point.hpp"
#include "ccopf/moments.hpp"
#include "ccopf/policy.hpp"
#include "ccopf/socp_builder.hpp"
#include "ccopf/validation.hpp"

namespace ccopf {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_infeasible = 2, exit_numerical = 3, exit_audit = 4 };

struct RunConfig {
  std::string case_path;
  std::string sites_path;       // optional overlay
  std::string forecast = "synthetic";  // or gpr:<csv>
  Scenario scenario = Scenario::S2;
  Balancing balancing = Balancing::local;
  double epsilon = 0.05;
  double sigma_cap = 0.01;
  int horizon = 12;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  long long samples = 100000;
  int workers = 1;
  SolverSettings solver;
  GprForecastOptions gpr;
  std::optional<double> gpr_scale;  // series units -> injection p.u.; default reads a feed-in in MW

  void validate() const {
    if (case_path.empty()) throw ArgumentError("--case is required");
    if (!std::filesystem::exists(case_path)) throw IoError("case file not found: " + case_path);
    if (!sites_path.empty() && !std::filesystem::exists(sites_path))
      throw IoError("site overlay not found: " + sites_path);
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ArgumentError("epsilon must lie in (0, 0.5)");
    if (horizon < 2) throw ArgumentError("horizon must be at least 2");
    if (samples < 1000) throw ArgumentError("validation needs at least 1000 samples");
    if (forecast != "synthetic" && forecast.rfind("gpr:", 0) != 0)
      throw ArgumentError("forecast source must be 'synthetic' or 'gpr:<csv>'");
    if (forecast.rfind("gpr:", 0) == 0 && !std::filesystem::exists(forecast.substr(4)))
      throw IoError("time series not found: " + forecast.substr(4));
  }

  GridModel load_grid() const {
    return load_case(case_path, sites_path.empty() ? std::nullopt : std::optional<std::string>(sites_path));
  }
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path.string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forecast

/// Disturbance models for every disturbance of the grid. With a GPR source
/// the stochastic sites take mean and factor from the series forecast
/// (scaled to per-unit, feed-in positive); certain loads stay synthetic.
inline std::vector<DisturbanceModel> make_forecasts(const RunConfig& cfg, const GridModel& grid,
                                                    std::vector<std::string>* warnings = nullptr) {
  auto dist = synthetic_forecasts(grid, cfg.horizon, warnings);
  if (cfg.forecast.rfind("gpr:", 0) == 0) {
    const TimeSeries ts = read_time_series_csv(cfg.forecast.substr(4));
    GprForecastOptions opt = cfg.gpr;
    opt.scale = cfg.gpr_scale.value_or(1.0 / grid.base_mva);
    const DisturbanceModel fit = gpr_forecast(ts, cfg.horizon, opt);
    const std::vector<int> sites = grid.disturbance_sites();
    for (auto& d : dist) {
      if (std::ranges::find(sites, d.node) == sites.end()) continue;
      const int node = d.node;
      d = fit;
      d.node = node;
    }
  }
  return dist;
}

/// Writes one JSON file per disturbance to <out>/forecasts. Nothing is written
/// unless every forecast succeeds.
inline std::vector<DisturbanceModel> cmd_forecast(const RunConfig& cfg) {
  cfg.validate();
  const GridModel grid = cfg.load_grid();
  const auto dist = make_forecasts(cfg, grid);
  const std::filesystem::path dir = std::filesystem::path(cfg.out_dir) / "forecasts";
  std::filesystem::create_directories(dir);
  for (const auto& d : dist) detail::write_file(dir / ("bus_" + std::to_string(d.node) + ".json"), to_json(d).dump(2) + "\n");
  return dist;
}

// ---------------------------------------------------------------------------
// solve

struct SolutionBundle {
  GridModel grid;
  std::vector<DisturbanceModel> dist;
  BuildResult build;
  SolveResult solve;
  std::optional<AffinePolicySet> policy;
  std::optional<MomentTable> moments;
  double assemble_seconds = 0.0;
  std::vector<std::string> warnings;
};

inline int exit_code_for(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return exit_ok;
    case SolveStatus::infeasible:
    case SolveStatus::unbounded: return exit_infeasible;
    default: return exit_numerical;
  }
}

inline RiskConfig risk_of(const RunConfig& cfg) {
  RiskConfig r;
  r.epsilon = cfg.epsilon;
  return r;
}

/// Assembles and solves without writing anything.
inline SolutionBundle solve_instance(const RunConfig& cfg) {
  cfg.validate();
  SolutionBundle b;
  b.grid = cfg.load_grid();
  b.dist = make_forecasts(cfg, b.grid, &b.warnings);
  const auto t0 = std::chrono::steady_clock::now();
  b.build = assemble(b.grid, b.dist, {cfg.scenario, cfg.balancing, cfg.sigma_cap}, risk_of(cfg), cfg.horizon);
  b.assemble_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  b.warnings.insert(b.warnings.end(), b.build.warnings.begin(), b.build.warnings.end());
  b.solve = solve(b.build.program, cfg.solver);
  if (b.solve.status == SolveStatus::optimal) {
    b.policy = b.build.map.decode(b.solve.primal);
    b.moments = compute_moments(b.grid, b.dist, *b.policy);
  }
  return b;
}

inline std::string moments_csv(const MomentTable& mt, double lambda) {
  std::ostringstream os;
  os << "quantity,element,t,mean,variance,stddev,lower_band,upper_band\n";
  auto rows = [&](const char* name, const std::map<int, Series>& g, int t0) {
    for (const auto& [bus, s] : g)
      for (std::size_t k = 0; k < s.mean.size(); ++k) {
        const double sd = std::sqrt(std::max(s.variance[k], 0.0));
        os << name << "," << bus << "," << t0 + static_cast<int>(k) << "," << detail::num(s.mean[k]) << ","
           << detail::num(s.variance[k]) << "," << detail::num(sd) << "," << detail::num(s.mean[k] - lambda * sd)
           << "," << detail::num(s.mean[k] + lambda * sd) << "\n";
      }
  };
  rows("disturbance", mt.disturbance, 1);
  rows("generation", mt.generation, 1);
  rows("ramp", mt.ramp, 2);
  rows("storage_injection", mt.storage_injection, 1);
  rows("storage_state", mt.storage_state, 0);  // t = injections applied
  return os.str();
}

inline std::string flows_csv(const GridModel& grid, const MomentTable& mt, double lambda) {
  std::ostringstream os;
  os << "line,from_bus,to_bus,t,mean,stddev,lower_band,upper_band,limit\n";
  for (int l = 0; l < grid.num_lines(); ++l) {
    const auto& s = mt.line_flow[l];
    const auto& line = grid.lines[l];
    for (std::size_t k = 0; k < s.mean.size(); ++k) {
      const double sd = std::sqrt(std::max(s.variance[k], 0.0));
      os << l + 1 << "," << line.from_bus << "," << line.to_bus << "," << k + 1 << "," << detail::num(s.mean[k])
         << "," << detail::num(sd) << "," << detail::num(s.mean[k] - lambda * sd) << ","
         << detail::num(s.mean[k] + lambda * sd) << "," << (line.limited() ? detail::num(line.flow_limit) : "")
         << "\n";
    }
  }
  return os.str();
}

inline nlohmann::json summary_json(const RunConfig& cfg, const SolutionBundle& b) {
  using nlohmann::json;
  json census = json::object();
  for (const auto& [k, n] : b.build.program.census()) census[k] = n;
  json j{{"case", std::filesystem::path(cfg.case_path).filename().string()},
         {"scenario", to_string(cfg.scenario)},
         {"balancing", to_string(cfg.balancing)},
         {"epsilon", cfg.epsilon},
         {"horizon", cfg.horizon},
         {"forecast", cfg.forecast},
         {"status", to_string(b.solve.status)},
         {"reduced_accuracy", b.solve.reduced_accuracy},
         {"objective", b.solve.status == SolveStatus::optimal ? json(b.solve.objective) : json(nullptr)},
         {"iterations", b.solve.iterations},
         {"residuals", {{"primal", b.solve.residuals.primal}, {"dual", b.solve.residuals.dual}, {"gap", b.solve.residuals.gap}}},
         {"policy_variables", b.build.policy_variables},
         {"auxiliary_variables", b.build.auxiliary_variables},
         {"constraints", census},
         {"warnings", b.warnings},
         {"metadata",
          {{"written_at", detail::utc_now()},
           {"assemble_seconds", b.assemble_seconds},
           {"solve_seconds", b.solve.solve_time},
           {"backend", b.solve.backend}}}};
  return j;
}

/// Solves and writes policy.json, moments.csv, flows.csv and summary.json.
inline SolutionBundle cmd_solve(const RunConfig& cfg) {
  SolutionBundle b = solve_instance(cfg);
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir / "forecasts");
  for (const auto& d : b.dist)
    detail::write_file(dir / "forecasts" / ("bus_" + std::to_string(d.node) + ".json"), to_json(d).dump(2) + "\n");
  if (b.policy) {
    const double lambda = quantile(cfg.epsilon);
    detail::write_file(dir / "policy.json", to_json(*b.policy).dump(2) + "\n");
    detail::write_file(dir / "moments.csv", moments_csv(*b.moments, lambda));
    detail::write_file(dir / "flows.csv", flows_csv(b.grid, *b.moments, lambda));
  }
  detail::write_file(dir / "summary.json", summary_json(cfg, b).dump(2) + "\n");
  return b;
}

// ---------------------------------------------------------------------------
// validate

/// Audits <out>/policy.json (solving first when it is absent) and writes
/// report.json and report.txt.
inline ValidationReport cmd_validate(const RunConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir(cfg.out_dir);
  GridModel grid = cfg.load_grid();
  const auto dist = make_forecasts(cfg, grid);
  const BuildResult build =
      assemble(grid, dist, {cfg.scenario, cfg.balancing, cfg.sigma_cap}, risk_of(cfg), cfg.horizon);
  AffinePolicySet policy;
  if (std::filesystem::exists(dir / "policy.json")) {
    policy = policy_from_json(detail::read_json(dir / "policy.json"));
  } else {
    const SolutionBundle b = cmd_solve(cfg);
    if (!b.policy) throw NumericalError(std::string("no policy to validate: solver status ") + to_string(b.solve.status));
    policy = *b.policy;
  }
  if (policy.horizon != cfg.horizon) throw ArgumentError("policy horizon differs from --horizon");
  ValidationSettings vs;
  vs.samples = cfg.samples;
  vs.seed = cfg.seed;
  vs.workers = cfg.workers;
  const ValidationReport rep = sample_and_audit(grid, dist, policy, build.chance, vs);
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "report.json", to_json(rep).dump(2) + "\n");
  detail::write_file(dir / "report.txt", format_report(rep));
  return rep;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::vector<std::string> cases;        // case file paths
  std::vector<int> uncertainties{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> storages{0, 5};
  std::vector<double> epsilons{0.025, 0.05, 0.10};
  std::vector<Balancing> balancings{Balancing::local, Balancing::global};
  double factor_scale = 0.1;
  double time_limit_seconds = 600;
};

struct BenchRow {
  std::string case_name;
  int n_d = 0, n_s = 0;
  Balancing balancing = Balancing::local;
  double epsilon = 0.05;
  long long variables = 0;
  double assemble_seconds = 0.0, solve_seconds = 0.0;
  std::optional<double> cost;
  std::string status;
};

/// Overlay for one benchmark configuration: uncertain sites at the most
/// heavily loaded buses, storages at a seeded random choice of buses without
/// a generator.
inline SiteOverlay bench_overlay(const MatpowerCase& mc, int n_d, int n_s, double factor_scale, std::uint64_t seed) {
  SiteOverlay o;
  std::vector<std::pair<double, int>> loads;
  std::set<int> gen_buses;
  for (const auto& g : mc.gen) gen_buses.insert(static_cast<int>(g[matpower::GEN_BUS]));
  std::vector<int> free_buses;
  for (const auto& r : mc.bus) {
    const int id = static_cast<int>(r[matpower::BUS_I]);
    if (static_cast<int>(r[matpower::BUS_TYPE]) == matpower::BUS_ISOLATED) continue;
    loads.emplace_back(r[matpower::PD], id);
    if (!gen_buses.count(id)) free_buses.push_back(id);
  }
  std::stable_sort(loads.begin(), loads.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n_d && k < static_cast<int>(loads.size()); ++k)
    o.disturbances.push_back({loads[k].second, std::numeric_limits<double>::quiet_NaN(), true, factor_scale});
  std::mt19937_64 rng(seed);
  std::shuffle(free_buses.begin(), free_buses.end(), rng);
  for (int k = 0; k < n_s && k < static_cast<int>(free_buses.size()); ++k) {
    StorageSpec s = o.rules.storage;
    s.bus = free_buses[k];
    o.storages.push_back(s);
  }
  return o;
}

inline std::string bench_header() {
  return "case,n_d,n_s,balancing,epsilon,variables,assemble_seconds,solve_seconds,cost,status\n";
}

inline std::string bench_line(const BenchRow& r) {
  std::ostringstream os;
  os << r.case_name << "," << r.n_d << "," << r.n_s << "," << to_string(r.balancing) << "," << r.epsilon << ","
     << r.variables << "," << detail::num(r.assemble_seconds) << "," << detail::num(r.solve_seconds) << ","
     << (r.cost ? detail::num(*r.cost) : "") << "," << r.status << "\n";
  return os.str();
}

/// Runs the sweep, appending each row to <out>/bench.csv as it finishes.
/// Failures (bad case data, infeasibility, time limit) become rows.
inline std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const BenchOptions& opt,
                                       const std::function<void(const BenchRow&)>& progress = {}) {
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = std::filesystem::path(cfg.out_dir) / "bench.csv";
  std::ofstream csv(path, std::ios::binary);
  if (!csv) throw IoError("cannot write " + path.string());
  csv << bench_header();
  std::vector<BenchRow> rows;
  auto emit = [&](const BenchRow& r) {
    rows.push_back(r);
    csv << bench_line(r) << std::flush;
    if (progress) progress(r);
  };
  SolverSettings settings = cfg.solver;
  settings.time_limit_seconds = opt.time_limit_seconds;
  for (const auto& case_path : opt.cases) {
    const std::string name = std::filesystem::path(case_path).stem().string();
    std::optional<MatpowerCase> mc;
    std::string load_error;
    try {
      mc = parse_matpower(read_text_file(case_path));
    } catch (const std::exception& e) {
      load_error = e.what();
    }
    for (int n_d : opt.uncertainties)
      for (int n_s : opt.storages)
        for (Balancing bal : opt.balancings)
          for (double eps : opt.epsilons) {
            BenchRow row{name, n_d, n_s, bal, eps};
            if (!mc) {
              row.status = "load_error: " + load_error;
              emit(row);
              continue;
            }
            try {
              const GridModel grid = build_grid(*mc, resolve_overlay(bench_overlay(*mc, n_d, n_s, opt.factor_scale, cfg.seed), *mc));
              row.n_d = static_cast<int>(grid.disturbance_sites().size());
              row.n_s = static_cast<int>(grid.storages.size());
              const auto dist = synthetic_forecasts(grid, cfg.horizon);
              RiskConfig risk;
              risk.epsilon = eps;
              const auto t0 = std::chrono::steady_clock::now();
              const auto build = assemble(grid, dist, {Scenario::S2, bal, cfg.sigma_cap}, risk, cfg.horizon);
              row.assemble_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
              row.variables = build.policy_variables;
              const auto res = solve(build.program, settings);
              row.solve_seconds = res.solve_time;
              row.status = to_string(res.status);
              if (res.status == SolveStatus::optimal) row.cost = res.objective;
            } catch (const std::exception& e) {
              std::string msg = e.what();
              std::replace(msg.begin(), msg.end(), ',', ';');
              row.status = "model_error: " + msg;
            }
            emit(row);
          }
  }
  return rows;
}

}  // namespace ccopf
