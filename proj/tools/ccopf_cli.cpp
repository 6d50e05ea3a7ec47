// ccopf: chance-constrained multi-period DC OPF with storage.
//
//   ccopf forecast --case data/case5.m --sites data/case5_sites.json --out out
//   ccopf solve    --case data/case5.m --sites data/case5_sites.json --scenario S2 --out out
//   ccopf validate --case data/case5.m --sites data/case5_sites.json --out out --samples 100000
//   ccopf run      (solve, then validate)
//   ccopf bench    --bench-case data/case5.m --bench-case data/case39.m --out bench

#include <CLI11.hpp>

#include <iostream>

#include "ccopf.hpp"

namespace {

using namespace ccopf;

struct Flags {
  RunConfig cfg;
  std::string scenario = "S2", balancing = "local";
  double gpr_scale = 0.0;
  bool gpr_scale_set = false;
  BenchOptions bench;
  std::vector<std::string> bench_balancing;
};

void add_common(CLI::App* app, Flags& f) {
  auto& c = f.cfg;
  app->add_option("--case", c.case_path, "MATPOWER case file")->required();
  app->add_option("--sites", c.sites_path, "site overlay (JSON)");
  app->add_option("--forecast", c.forecast, "synthetic | gpr:<csv>");
  app->add_option("--scenario", f.scenario, "S1 (no storage) | S2 | S3 (capped generator deviation)");
  app->add_option("--balancing", f.balancing, "local | global");
  app->add_option("--epsilon", c.epsilon, "risk level of every chance constraint");
  app->add_option("--horizon", c.horizon, "number of time steps");
  app->add_option("--sigma-cap", c.sigma_cap, "generator standard deviation cap in S3");
  app->add_option("--seed", c.seed, "sampling seed");
  app->add_option("--samples", c.samples, "Monte Carlo samples for validation");
  app->add_option("--workers", c.workers, "validation threads");
  app->add_option("--out", c.out_dir, "output directory");
  app->add_option("--tol", c.solver.tol, "solver tolerance");
  app->add_option("--max-iter", c.solver.max_iterations, "solver iteration limit");
  app->add_option("--time-limit", c.solver.time_limit_seconds, "solver wall-clock limit in seconds, 0 = none");
  app->add_flag("--verbose", c.solver.verbose, "print solver iterations");
  app->add_option("--gpr-noise", c.gpr.noise, "GP observation noise variance");
  app->add_option("--gpr-smoothing", c.gpr.smoothing, "rolling-mean window before fitting");
  app->add_option("--gpr-train", c.gpr.train_points, "use only the last N points, 0 = all");
  app->add_option("--gpr-scale", f.gpr_scale, "series units to injection p.u. (default 1/baseMVA, feed-in in MW)")
      ->each([&f](const std::string&) { f.gpr_scale_set = true; });
  app->add_flag("!--gpr-no-fit", c.gpr.fit, "keep the given kernel hyperparameters");
}

void finish(Flags& f) {
  f.cfg.scenario = parse_scenario(f.scenario);
  f.cfg.balancing = parse_balancing(f.balancing);
  if (f.gpr_scale_set) f.cfg.gpr_scale = f.gpr_scale;
}

int report_solve(const SolutionBundle& b) {
  std::cout << "status     " << to_string(b.solve.status) << (b.solve.reduced_accuracy ? " (reduced accuracy)" : "")
            << "\niterations " << b.solve.iterations << "\nsolve time " << b.solve.solve_time << " s\n";
  if (b.solve.status == SolveStatus::optimal) std::cout << "objective  " << b.solve.objective << "\n";
  for (const auto& w : b.warnings) std::cerr << "warning: " << w << "\n";
  return exit_code_for(b.solve.status);
}

int report_validate(const ValidationReport& rep) {
  std::cout << format_report(rep);
  return rep.passed() ? exit_ok : exit_audit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chance-constrained DC OPF with storage and affine policies"};
  app.require_subcommand(1);
  Flags f;

  auto* forecast = app.add_subcommand("forecast", "write disturbance forecasts");
  auto* solve_cmd = app.add_subcommand("solve", "assemble and solve; write policy, moments, flows, summary");
  auto* validate = app.add_subcommand("validate", "Monte Carlo audit of the policy in --out");
  auto* run = app.add_subcommand("run", "solve, then validate");
  for (auto* sc : {forecast, solve_cmd, validate, run}) add_common(sc, f);

  auto* bench = app.add_subcommand("bench", "benchmark sweep over cases, uncertainties, storages, risk levels");
  bench->add_option("--bench-case", f.bench.cases, "case file (repeatable)")->required();
  bench->add_option("--uncertainties", f.bench.uncertainties, "uncertain site counts")->delimiter(',');
  bench->add_option("--storages", f.bench.storages, "storage counts")->delimiter(',');
  bench->add_option("--epsilons", f.bench.epsilons, "risk levels")->delimiter(',');
  bench->add_option("--balancings", f.bench_balancing, "local,global")->delimiter(',');
  bench->add_option("--factor-scale", f.bench.factor_scale, "scale of the synthetic uncertainty");
  bench->add_option("--time-limit", f.bench.time_limit_seconds, "per-row solver limit in seconds");
  bench->add_option("--horizon", f.cfg.horizon, "number of time steps");
  bench->add_option("--seed", f.cfg.seed, "storage placement seed");
  bench->add_option("--out", f.cfg.out_dir, "output directory");
  bench->add_option("--tol", f.cfg.solver.tol, "solver tolerance");
  bench->add_option("--max-iter", f.cfg.solver.max_iterations, "solver iteration limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_usage;
  }

  try {
    if (bench->parsed()) {
      if (!f.bench_balancing.empty()) {
        f.bench.balancings.clear();
        for (const auto& b : f.bench_balancing) f.bench.balancings.push_back(parse_balancing(b));
      }
      const auto rows = cmd_bench(f.cfg, f.bench, [](const BenchRow& r) { std::cout << bench_line(r) << std::flush; });
      // risk levels should barely move the cost
      std::map<std::tuple<std::string, int, int, int>, std::pair<double, double>> range;
      for (const auto& r : rows) {
        if (!r.cost) continue;
        auto [it, fresh] = range.try_emplace({r.case_name, r.n_d, r.n_s, static_cast<int>(r.balancing)}, *r.cost, *r.cost);
        if (!fresh) it->second = {std::min(it->second.first, *r.cost), std::max(it->second.second, *r.cost)};
      }
      for (const auto& [k, v] : range)
        if (v.second > 1.05 * v.first)
          std::cerr << "warning: " << std::get<0>(k) << " N_d=" << std::get<1>(k) << " N_s=" << std::get<2>(k)
                    << ": cost varies by more than 5% across risk levels\n";
      return exit_ok;
    }
    finish(f);
    if (forecast->parsed()) {
      const auto dist = cmd_forecast(f.cfg);
      std::cout << "wrote " << dist.size() << " forecasts to " << f.cfg.out_dir << "/forecasts\n";
      return exit_ok;
    }
    if (solve_cmd->parsed()) return report_solve(cmd_solve(f.cfg));
    if (validate->parsed()) return report_validate(cmd_validate(f.cfg));
    if (run->parsed()) {
      const int rc = report_solve(cmd_solve(f.cfg));
      if (rc != exit_ok) return rc;
      return report_validate(cmd_validate(f.cfg));
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}
