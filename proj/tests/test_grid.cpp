#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ccopf/grid.hpp"

using namespace ccopf;

namespace {

struct Branch {
  int from, to;
  double x;
};

// Minimal case text: bus 1 carries a generator so the case is complete.
std::string case_text(int buses, const std::vector<Branch>& branches, int slack = 1) {
  std::ostringstream os;
  os << "function mpc = toy\nmpc.baseMVA = 100;\nmpc.bus = [\n";
  for (int b = 1; b <= buses; ++b) os << b << "\t" << (b == slack ? 3 : 1) << "\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;\n";
  os << "];\nmpc.gen = [\n1\t0\t0\t0\t0\t1\t100\t1\t100\t0;\n];\nmpc.branch = [\n";
  for (const auto& br : branches) os << br.from << "\t" << br.to << "\t0\t" << br.x << "\t0\t0\t0\t0\t0\t0\t1;\n";
  os << "];\n";
  return os.str();
}

std::string data(const std::string& name) { return std::string(CCOPF_DATA_DIR) + "/" + name; }

// DC flows from the minimum-norm solution of the full Laplacian system,
// independent of any reference bus choice.
Eigen::VectorXd dc_flows(const GridModel& g, const Eigen::VectorXd& p) {
  const int n = g.num_buses();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (const auto& l : g.lines) {
    const int f = g.bus_index(l.from_bus), t = g.bus_index(l.to_bus);
    lap(f, f) += 1 / l.reactance;
    lap(t, t) += 1 / l.reactance;
    lap(f, t) -= 1 / l.reactance;
    lap(t, f) -= 1 / l.reactance;
  }
  const Eigen::VectorXd theta = lap.completeOrthogonalDecomposition().solve(p);
  Eigen::VectorXd c(g.num_lines());
  for (int j = 0; j < g.num_lines(); ++j) {
    const auto& l = g.lines[j];
    c[j] = (theta[g.bus_index(l.from_bus)] - theta[g.bus_index(l.to_bus)]) / l.reactance;
  }
  return c;
}

Eigen::VectorXd random_balanced(int n, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i) p[i] = nd(rng);
  p.array() -= p.mean();
  return p;
}

}  // namespace

TEST(Ptdf, TwoBusLine) {
  SiteOverlay o;
  o.reference_bus = 2;
  const GridModel g = parse_case(case_text(2, {{1, 2, 0.1}}), o);
  ASSERT_EQ(g.ptdf.rows(), 1);
  EXPECT_NEAR(g.ptdf(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(g.ptdf(0, 1), 0.0, 1e-12);
}

TEST(Ptdf, ThreeBusRingByHand) {
  // lines 1->2, 2->3, 1->3; 2/3 of the unit goes direct, 1/3 around
  const GridModel g = parse_case(case_text(3, {{1, 2, 1.0}, {2, 3, 1.0}, {1, 3, 1.0}}));
  Eigen::VectorXd p(3);
  p << 1, -1, 0;
  const Eigen::VectorXd c = g.ptdf * p;
  EXPECT_NEAR(c[0], 2.0 / 3, 1e-12);
  EXPECT_NEAR(c[1], -1.0 / 3, 1e-12);
  EXPECT_NEAR(c[2], 1.0 / 3, 1e-12);
}

TEST(Ptdf, MatchesDirectDcSolveOnCase5) {
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  std::mt19937 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd p = random_balanced(g.num_buses(), rng);
    EXPECT_LT((g.ptdf * p - dc_flows(g, p)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Ptdf, ReferenceColumnIsZeroAndChoiceDoesNotMatterForBalancedInjections) {
  const GridModel g = load_case(data("case39.m"));
  std::mt19937 rng(5);
  for (int ref : {1, 17, 39}) {
    const GridModel h = g.with_reference(ref);
    EXPECT_EQ(h.ptdf.col(h.bus_index(ref)).cwiseAbs().maxCoeff(), 0.0);
    const Eigen::VectorXd p = random_balanced(g.num_buses(), rng);
    EXPECT_LT((h.ptdf * p - g.ptdf * p).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((h.ptdf * p - dc_flows(h, p)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(GridModel, Case5WithSites) {
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  ASSERT_EQ(g.generators.size(), 2u);
  EXPECT_EQ(g.generators[0].bus, 1);
  EXPECT_EQ(g.generators[1].bus, 4);
  ASSERT_EQ(g.storages.size(), 1u);
  EXPECT_EQ(g.storages[0].bus, 5);
  EXPECT_EQ(g.num_lines(), 6);
  EXPECT_EQ(g.disturbance_sites(), std::vector<int>{4});
  // merged capacity at bus 1: 40 + 170 MW
  EXPECT_NEAR(g.generators[0].p_max, 2.1, 1e-12);
  EXPECT_NEAR(g.generators[0].u_max, 1.1 * 2.1, 1e-12);
  EXPECT_NEAR(g.generators[0].ramp_max, 0.15 * 2.1, 1e-12);
}

TEST(GridModel, Case39Counts) {
  const GridModel g = load_case(data("case39.m"), data("case39_sites.json"));
  EXPECT_EQ(g.generators.size(), 10u);
  EXPECT_EQ(g.num_lines(), 46);
  EXPECT_EQ(g.storages.size(), 5u);
  EXPECT_EQ(g.disturbance_sites().size(), 7u);
}

TEST(GridModel, SingleBusIsRejected) {
  const std::string text =
      "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;];\n"
      "mpc.gen = [1 0 0 0 0 1 100 1 100 0;];\nmpc.branch = [];\n";
  EXPECT_THROW(parse_case(text), ModelError);
}

TEST(GridModel, DisconnectedIsRejected) {
  EXPECT_THROW(parse_case(case_text(4, {{1, 2, 0.1}, {3, 4, 0.1}})), ModelError);
}

TEST(GridModel, NonPositiveReactanceIsRejected) {
  EXPECT_THROW(parse_case(case_text(2, {{1, 2, -0.1}})), ModelError);
}

TEST(GridModel, UnknownReferenceIsRejected) {
  SiteOverlay o;
  o.reference_bus = 9;
  EXPECT_THROW(parse_case(case_text(2, {{1, 2, 0.1}}), o), ModelError);
}

TEST(GridModel, StorageReplacesGeneratorAtItsBus) {
  SiteOverlay o;
  o.storages.push_back(StorageSpec{.bus = 1});
  const GridModel g = parse_case(case_text(2, {{1, 2, 0.1}}), o);
  EXPECT_TRUE(g.generators.empty());
  ASSERT_EQ(g.storages.size(), 1u);
}

TEST(Matpower, WriteThenParseRoundTrips) {
  const MatpowerCase a = parse_matpower(read_text_file(data("case39.m")));
  const MatpowerCase b = parse_matpower(write_matpower(a));
  EXPECT_EQ(a.base_mva, b.base_mva);
  EXPECT_EQ(a.bus, b.bus);
  EXPECT_EQ(a.gen, b.gen);
  EXPECT_EQ(a.branch, b.branch);
  EXPECT_EQ(a.gencost, b.gencost);
}

TEST(Matpower, ParseErrorsCarryLineNumbers) {
  try {
    parse_matpower("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 abc;\n];\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find('3'), std::string::npos);
  }
}

TEST(Matpower, Case300HasNegativeReactancesAndIsRejected) {
  EXPECT_THROW(load_case(data("case300.m")), ModelError);
}
