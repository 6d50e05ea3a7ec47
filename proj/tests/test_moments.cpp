#include <gtest/gtest.h>

#include <random>

#include "ccopf/moments.hpp"

using namespace ccopf;

namespace {

std::string data(const std::string& name) { return std::string(CCOPF_DATA_DIR) + "/" + name; }

AffinePolicySet random_policy(const GridModel& g, int T, Balancing b, std::mt19937& rng, double gain_sd = 0.1) {
  std::vector<int> gens, stos;
  for (const auto& x : g.generators) gens.push_back(x.bus);
  for (const auto& x : g.storages) stos.push_back(x.bus);
  auto p = AffinePolicySet::zeros(T, b, g.disturbance_sites(), gens, stos);
  std::normal_distribution<double> nd;
  for (auto* group : {&p.generators, &p.storages})
    for (auto& r : *group) {
      for (auto& v : r.nominal) v = nd(rng);
      for (auto& gain : r.gains)
        for (auto& v : gain.packed()) v = gain_sd * nd(rng);
    }
  return p;
}

AffinePolicySet single_site(int T, std::vector<int> gens, std::vector<int> stos) {
  return AffinePolicySet::zeros(T, Balancing::local, {4}, gens, stos);
}

}  // namespace

TEST(Moments, ZeroGainsAreDeterministic) {
  auto p = single_site(4, {1}, {5});
  p.generators[0].nominal << 0.3, 0.4, 0.5, 0.6;
  const auto m = moments_generation(p, 1, 3);
  EXPECT_DOUBLE_EQ(m.mean, 0.5);
  EXPECT_DOUBLE_EQ(m.variance, 0.0);
  const auto r = moments_ramp(p, 1, 2);
  EXPECT_NEAR(r.mean, 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(r.variance, 0.0);
  StorageSpec spec{.bus = 5};
  for (int t = 0; t <= 4; ++t) EXPECT_DOUBLE_EQ(moments_storage_state(p, spec, t).variance, 0.0);
}

TEST(Moments, IdentityGainVariance) {
  auto p = single_site(5, {1}, {5});
  for (int t = 0; t < 5; ++t) {
    p.generators[0].gains[0](t, t) = 1.0;
    p.storages[0].gains[0](t, t) = 1.0;
  }
  // row t of the identity has a single unit entry
  EXPECT_DOUBLE_EQ(moments_generation(p, 1, 3).variance, 1.0);
  EXPECT_DOUBLE_EQ(moments_storage_injection(p, 5, 3).variance, 1.0);
  // state after two injections: inner sums are one each
  EXPECT_DOUBLE_EQ(moments_storage_state(p, StorageSpec{.bus = 5}, 2).variance, 2.0);
}

TEST(Moments, FullLowerTriangleOfOnes) {
  auto p = single_site(5, {1}, {5});
  for (int t = 0; t < 5; ++t)
    for (int k = 0; k <= t; ++k) p.generators[0].gains[0](t, k) = p.storages[0].gains[0](t, k) = 1.0;
  EXPECT_DOUBLE_EQ(moments_generation(p, 1, 3).variance, 3.0);
  EXPECT_DOUBLE_EQ(moments_storage_injection(p, 5, 3).variance, 3.0);
  // column sums over rows k..2 are 2 and 1
  EXPECT_DOUBLE_EQ(moments_storage_state(p, StorageSpec{.bus = 5}, 2).variance, 5.0);
}

TEST(Moments, StorageIntegratesInjections) {
  auto p = single_site(4, {1}, {5});
  p.storages[0].nominal << 0.5, 0.5, 0.0, 0.0;
  const StorageSpec spec{.bus = 5, .e_initial_mean = 2.0};
  EXPECT_DOUBLE_EQ(moments_storage_state(p, spec, 2).mean, 1.0);
  EXPECT_DOUBLE_EQ(moments_storage_state(p, spec, 0).mean, 2.0);
}

TEST(Moments, RampDifferenceCancels) {
  auto p = single_site(4, {1}, {});
  auto& g = p.generators[0].gains[0];
  g(1, 0) = 0.7;
  g(2, 0) = 0.7;
  g(1, 1) = -0.2;
  g(2, 1) = -0.2;
  g(2, 2) = 0.35;
  EXPECT_NEAR(moments_ramp(p, 1, 3).variance, 0.35 * 0.35, 1e-15);
}

TEST(Moments, LineFlowOfLocallyBalancedBus) {
  const std::string text =
      "mpc.baseMVA = 100;\nmpc.bus = [1 1 0 0 0 0 1 1 0 230 1 1.1 0.9; 2 3 0 0 0 0 1 1 0 230 1 1.1 0.9;];\n"
      "mpc.gen = [1 0 0 0 0 1 100 1 100 0;];\nmpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1;];\n";
  SiteOverlay o;
  o.include_case_loads = false;
  o.disturbances.push_back({1, 0.6, false, 1.0});
  const GridModel g = parse_case(text, o);
  const std::vector<DisturbanceModel> dist{synthetic_load(0.6, 1, FactorSource::none, 1.0, 1)};
  auto p = AffinePolicySet::zeros(1, Balancing::local, {}, {1}, {});
  p.generators[0].nominal[0] = 0.6;
  const auto m = moments_line_flow(g, dist, p, 1, 1);
  EXPECT_NEAR(m.mean, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.variance, 0.0);
}

TEST(Moments, RejectsBadIndices) {
  auto p = single_site(4, {1}, {5});
  EXPECT_THROW(moments_generation(p, 1, 0), ArgumentError);
  EXPECT_THROW(moments_generation(p, 1, 5), ArgumentError);
  EXPECT_THROW(moments_ramp(p, 1, 1), ArgumentError);
  EXPECT_THROW(moments_generation(p, 2, 1), ArgumentError);
}

TEST(VariableCount, ClosedForms) {
  auto local = [](long long nu, long long ns, long long nd, long long T) { return (nu + ns) * (T + nd * T * (T + 1) / 2); };
  EXPECT_EQ(count_decision_variables(2, 1, 1, 12, Balancing::local), 270);
  EXPECT_EQ(count_decision_variables(10, 5, 7, 12, Balancing::local), 8370);
  EXPECT_EQ(count_decision_variables(10, 5, 7, 12, Balancing::global), 1350);
  EXPECT_EQ(count_decision_variables(10, 5, 7, 12, Balancing::local), local(10, 5, 7, 12));
  const GridModel g39 = load_case(data("case39.m"), data("case39_sites.json"));
  EXPECT_EQ(count_decision_variables(g39, 12, Balancing::local), 15 * 558);
  EXPECT_EQ(count_decision_variables(g39, 12, Balancing::global), 15 * 90);
  const GridModel g5 = load_case(data("case5.m"), data("case5_sites.json"));
  EXPECT_EQ(count_decision_variables(g5, 12, Balancing::local), 3 * (12 + 78));
}

TEST(Realize, ZeroGermGivesNominalSchedules) {
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  const auto dist = synthetic_forecasts(g, 12);
  std::mt19937 rng(1);
  const auto p = random_policy(g, 12, Balancing::local, rng);
  GermSample germ{{Eigen::VectorXd::Zero(12)}, {0.0}};
  const auto tr = realize_policy(g, dist, p, germ);
  EXPECT_EQ(tr.u[0], p.generators[0].nominal);
  EXPECT_EQ(tr.s[0], p.storages[0].nominal);
  const auto mt = compute_moments(g, dist, p);
  for (int t = 0; t < 12; ++t)
    for (int l = 0; l < g.num_lines(); ++l) EXPECT_NEAR(tr.c(l, t), mt.line_flow[l].mean[t], 1e-12);
}

TEST(Realize, OneHotGermPicksAGainColumn) {
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  const auto dist = synthetic_forecasts(g, 12);
  std::mt19937 rng(2);
  const auto p = random_policy(g, 12, Balancing::local, rng);
  const int k = 4;
  GermSample germ{{Eigen::VectorXd::Unit(12, k)}, {0.0}};
  const auto tr = realize_policy(g, dist, p, germ);
  const Eigen::VectorXd resp = tr.u[1] - p.generators[1].nominal;
  for (int t = 0; t < 12; ++t) EXPECT_NEAR(resp[t], p.generators[1].gains[0].at(t, k), 1e-15);
}

TEST(Realize, FlowsEqualPtdfTimesInjections) {
  const GridModel g = load_case(data("case39.m"), data("case39_sites.json"));
  const auto dist = synthetic_forecasts(g, 12);
  std::mt19937 rng(3);
  const auto p = random_policy(g, 12, Balancing::local, rng);
  std::normal_distribution<double> nd;
  GermSample germ;
  for (std::size_t j = 0; j < p.sites.size(); ++j) {
    Eigen::VectorXd v(12);
    for (auto& x : v) x = nd(rng);
    germ.sites.push_back(v);
  }
  germ.initial.assign(p.storages.size(), 0.0);
  const auto tr = realize_policy(g, dist, p, germ);
  // injections rebuilt by hand
  Eigen::MatrixXd inj = Eigen::MatrixXd::Zero(g.num_buses(), 12);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const int pos = p.site_position(dist[i].node);
    Eigen::VectorXd d = dist[i].mean;
    if (pos >= 0) d += dist[i].factor * germ.sites[pos];
    inj.row(g.bus_index(dist[i].node)) += d.transpose();
  }
  for (const auto* group : {&p.generators, &p.storages})
    for (const auto& r : *group) {
      Eigen::VectorXd x = r.nominal;
      for (std::size_t j = 0; j < p.sites.size(); ++j) x += r.gains[j].dense() * germ.sites[j];
      inj.row(g.bus_index(r.bus)) += x.transpose();
    }
  EXPECT_LT((tr.c - g.ptdf * inj).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Realize, BalanceResidualScalesWithTheBreach) {
  // one responder exactly cancelling a single site, then perturbed by delta
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  auto dist = synthetic_forecasts(g, 3);
  auto p = AffinePolicySet::zeros(3, Balancing::local, {4}, {1, 4}, {});
  for (int t = 0; t < 3; ++t) {
    double sum = 0.0;
    for (const auto& d : dist) sum += d.mean[t];
    p.generators[0].nominal[t] = -sum;
  }
  const DisturbanceModel* site = nullptr;
  for (const auto& d : dist)
    if (d.node == 4) site = &d;
  p.generators[0].gains[0] = LowerTriangular::from_dense(-site->factor);
  GermSample zero{{Eigen::VectorXd::Zero(3)}, {}};
  EXPECT_LE(balance_residual(realize_policy(g, dist, p, zero)), 1e-12);
  GermSample germ{{Eigen::Vector3d(0.3, -1.2, 2.0)}, {}};
  EXPECT_LE(balance_residual(realize_policy(g, dist, p, germ)), 1e-12);
  for (double delta : {1e-3, 2e-3}) {
    auto q = p;
    q.generators[1].gains[0](1, 1) = delta;
    EXPECT_NEAR(balance_residual(realize_policy(g, dist, q, germ)), delta * 1.2, 1e-12);
  }
}

TEST(Realize, GlobalPolicyMatchesItsExpansion) {
  const GridModel g = load_case(data("case39.m"), data("case39_sites.json"));
  const auto dist = synthetic_forecasts(g, 12);
  std::mt19937 rng(4);
  const auto p = random_policy(g, 12, Balancing::global, rng);
  const auto e = p.expanded();
  const auto a = compute_moments(g, dist, p), b = compute_moments(g, dist, e);
  for (const auto& [bus, s] : a.generation) EXPECT_EQ(s.variance, b.generation.at(bus).variance);
  for (int l = 0; l < g.num_lines(); ++l)
    for (int t = 0; t < 12; ++t) EXPECT_NEAR(a.line_flow[l].variance[t], b.line_flow[l].variance[t], 1e-12);
}

// Sampling oracle: every closed-form mean and variance against Monte Carlo
// over an independent standard library generator, within 4 standard errors.
TEST(MonteCarlo, ClosedFormsMatchSampleMoments) {
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  auto dist = synthetic_forecasts(g, 6, nullptr);
  std::mt19937 rng(2024);
  const auto p = random_policy(g, 6, Balancing::local, rng, 0.05);
  const auto mt = compute_moments(g, dist, p);
  const int n = 20000;
  std::normal_distribution<double> nd;
  std::vector<Trajectories> runs;
  runs.reserve(n);
  GermSample germ{{Eigen::VectorXd(6)}, {0.0}};
  for (int i = 0; i < n; ++i) {
    for (auto& x : germ.sites[0]) x = nd(rng);
    runs.push_back(realize_policy(g, dist, p, germ));
  }
  auto check = [&](const char* what, int t, const Series& s, int pos, auto value) {
    double sum = 0, sq = 0;
    for (const auto& r : runs) sum += value(r);
    const double mean = sum / n;
    for (const auto& r : runs) sq += (value(r) - mean) * (value(r) - mean);
    const double var = sq / (n - 1);
    const double m = s.mean[pos], v = s.variance[pos];
    const double tol_m = 4 * std::sqrt(v / n) + 1e-12, tol_v = 4 * v * std::sqrt(2.0 / (n - 1)) + 1e-12;
    EXPECT_NEAR(mean, m, tol_m) << what << " t=" << t;
    EXPECT_NEAR(var, v, tol_v) << what << " t=" << t;
  };
  for (int t = 0; t < 6; ++t) {
    for (std::size_t r = 0; r < p.generators.size(); ++r)
      check("u", t, mt.generation.at(p.generators[r].bus), t, [&](const Trajectories& x) { return x.u[r][t]; });
    check("s", t, mt.storage_injection.at(5), t, [&](const Trajectories& x) { return x.s[0][t]; });
    check("e", t + 1, mt.storage_state.at(5), t + 1, [&](const Trajectories& x) { return x.e[0][t + 1]; });
    for (std::size_t i = 0; i < dist.size(); ++i)
      check("d", t, mt.disturbance.at(dist[i].node), t, [&](const Trajectories& x) { return x.d[i][t]; });
    for (int l = 0; l < g.num_lines(); ++l)
      check("c", t, mt.line_flow[l], t, [&](const Trajectories& x) { return x.c(l, t); });
    if (t >= 1)
      for (std::size_t r = 0; r < p.generators.size(); ++r)
        check("du", t, mt.ramp.at(p.generators[r].bus), t - 1,
              [&](const Trajectories& x) { return x.u[r][t] - x.u[r][t - 1]; });
  }
}

TEST(PolicyJson, RoundTrip) {
  const GridModel g = load_case(data("case5.m"), data("case5_sites.json"));
  std::mt19937 rng(8);
  const auto p = random_policy(g, 12, Balancing::local, rng);
  EXPECT_EQ(policy_from_json(to_json(p)), p);
}
