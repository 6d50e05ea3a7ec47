#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ccopf.hpp"

using namespace ccopf;
namespace fs = std::filesystem;

namespace {

std::string data(const std::string& name) { return std::string(CCOPF_DATA_DIR) + "/" + name; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ccopf_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig case5(const fs::path& out) {
  RunConfig c;
  c.case_path = data("case5.m");
  c.sites_path = data("case5_sites.json");
  c.out_dir = out.string();
  c.samples = 5000;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(RunConfig, RejectsBadInputs) {
  auto c = case5(scratch("cfg"));
  EXPECT_NO_THROW(c.validate());
  c.epsilon = 0.5;
  EXPECT_THROW(c.validate(), ArgumentError);
  c.epsilon = 0.05;
  c.horizon = 1;
  EXPECT_THROW(c.validate(), ArgumentError);
  c.horizon = 12;
  c.case_path = data("nope.m");
  EXPECT_THROW(c.validate(), IoError);
}

TEST(Pipeline, SyntheticForecastWritesOneFilePerDisturbance) {
  const auto out = scratch("fc");
  const auto dist = cmd_forecast(case5(out));
  ASSERT_EQ(dist.size(), 3u);
  for (int bus : {2, 3, 4}) {
    const auto d = disturbance_from_json(nlohmann::json::parse(slurp(out / "forecasts" / ("bus_" + std::to_string(bus) + ".json"))));
    EXPECT_EQ(d.node, bus);
    EXPECT_EQ(d.stochastic(), bus == 4);
  }
}

TEST(Pipeline, GprForecastFromATwoPointSeries) {
  const auto out = scratch("gpr");
  fs::create_directories(out);
  std::ofstream(out / "toy.csv") << "t,value\n0,10\n1,12\n";
  auto c = case5(out);
  c.forecast = "gpr:" + (out / "toy.csv").string();
  cmd_forecast(c);
  const auto d = disturbance_from_json(nlohmann::json::parse(slurp(out / "forecasts" / "bus_4.json")));
  ASSERT_EQ(d.factor.rows(), 12);
  ASSERT_EQ(d.factor.cols(), 12);
  EXPECT_TRUE(d.factor.isLowerTriangular());
  EXPECT_TRUE(d.mean.allFinite());
}

TEST(Pipeline, MissingSeriesLeavesNoOutput) {
  const auto out = scratch("missing");
  auto c = case5(out);
  c.forecast = "gpr:" + (out / "absent.csv").string();
  try {
    cmd_forecast(c);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.csv"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(out));
}

TEST(Pipeline, SolveAndValidateAreIdempotent) {
  const auto a = scratch("idem_a"), b = scratch("idem_b");
  const auto ra = cmd_solve(case5(a));
  ASSERT_EQ(ra.solve.status, SolveStatus::optimal);
  cmd_validate(case5(a));
  cmd_solve(case5(b));
  cmd_validate(case5(b));
  for (const char* f : {"policy.json", "moments.csv", "flows.csv", "report.json", "report.txt"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  auto sa = nlohmann::json::parse(slurp(a / "summary.json"));
  auto sb = nlohmann::json::parse(slurp(b / "summary.json"));
  sa.erase("metadata");
  sb.erase("metadata");
  EXPECT_EQ(sa, sb);
}

TEST(Pipeline, MomentsCsvCarriesBands) {
  const auto out = scratch("bands");
  const auto b = cmd_solve(case5(out));
  std::istringstream in(slurp(out / "moments.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "quantity,element,t,mean,variance,stddev,lower_band,upper_band");
  const double lambda = quantile(0.05);
  int checked = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 8u);
    const double m = std::stod(f[3]), sd = std::stod(f[5]);
    EXPECT_NEAR(std::stod(f[6]), m - lambda * sd, 1e-9 * (1 + std::abs(m)));
    EXPECT_NEAR(std::stod(f[7]), m + lambda * sd, 1e-9 * (1 + std::abs(m)));
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Pipeline, ValidateWithoutPolicySolvesFirst) {
  const auto out = scratch("val_only");
  const auto rep = cmd_validate(case5(out));
  EXPECT_TRUE(fs::exists(out / "policy.json"));
  EXPECT_TRUE(rep.passed());
}

TEST(Pipeline, ExitCodes) {
  EXPECT_EQ(exit_code_for(SolveStatus::optimal), 0);
  EXPECT_EQ(exit_code_for(SolveStatus::infeasible), 2);
  EXPECT_EQ(exit_code_for(SolveStatus::numerical_failure), 3);
  EXPECT_EQ(exit_code_for(SolveStatus::iteration_limit), 3);
}

TEST(Bench, VariablesMatchTheClosedFormCount) {
  auto c = case5(scratch("bench"));
  BenchOptions opt;
  opt.cases = {data("case5.m")};
  opt.uncertainties = {1, 2, 3};
  opt.storages = {0, 2};
  opt.epsilons = {0.05};
  const auto rows = cmd_bench(c, opt);
  ASSERT_EQ(rows.size(), 3u * 2 * 2);
  const auto mc = parse_matpower(read_text_file(data("case5.m")));
  std::set<double> gen_buses;  // generators sharing a bus act as one
  for (const auto& g : mc.gen) gen_buses.insert(g[0]);
  const int n_u = static_cast<int>(gen_buses.size());
  for (const auto& r : rows) {
    ASSERT_EQ(r.status, "optimal") << r.n_d << " " << r.n_s;
    // written out: (N_u + N_s) (T + N_d T(T+1)/2) for local, N_d -> 1 for global
    const long long tri = 12 * 13 / 2;
    const long long per = r.balancing == Balancing::local ? 12 + r.n_d * tri : 12 + tri;
    EXPECT_EQ(r.variables, (n_u + r.n_s) * per);
  }
  for (const auto& l : rows)
    for (const auto& g : rows)
      if (l.balancing == Balancing::local && g.balancing == Balancing::global && l.n_d == g.n_d && l.n_s == g.n_s &&
          l.n_d >= 2)
        EXPECT_LT(g.variables, l.variables);
  EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / "bench.csv"));
}

TEST(Bench, BadCaseBecomesARow) {
  auto c = case5(scratch("bench300"));
  BenchOptions opt;
  opt.cases = {data("case300.m")};
  opt.uncertainties = {1};
  opt.storages = {0};
  opt.epsilons = {0.05};
  opt.balancings = {Balancing::local};
  const auto rows = cmd_bench(c, opt);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].cost);
  EXPECT_NE(rows[0].status.find("error"), std::string::npos);
}
