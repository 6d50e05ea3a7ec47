#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "ccopf/forecast.hpp"

using namespace ccopf;

namespace {

KernelSpec rbf_only(double var, double len) { return {0.0, 24.0, var, len, 0.0}; }

Eigen::VectorXd grid_points(int n, double start = 0.0) {
  return Eigen::VectorXd::LinSpaced(n, start, start + n - 1);
}

}  // namespace

TEST(SyntheticLoad, MeanFollowsTheSineProfile) {
  const auto d = synthetic_load(1.0, 12);
  EXPECT_DOUBLE_EQ(d.mean[0], -1.0);
  EXPECT_NEAR(d.mean[3], -(1.0 + 0.1 * std::sin(std::numbers::pi / 2)), 1e-15);
  EXPECT_TRUE(d.factor.isZero(0.0));
  EXPECT_FALSE(d.stochastic());
}

TEST(SyntheticLoad, ExemplarVariances) {
  const auto d = synthetic_load(1.0, 12, FactorSource::exemplar);
  EXPECT_NEAR(d.variance(1), 0.0087 * 0.0087, 1e-15);
  EXPECT_NEAR(d.variance(1), 7.569e-5, 1e-15);
  EXPECT_NEAR(d.variance(2), 3.1376e-4, 1e-15);
  EXPECT_TRUE(d.stochastic());
}

TEST(SyntheticLoad, ExemplarNeedsTwelveSteps) {
  EXPECT_THROW(synthetic_load(1.0, 8, FactorSource::exemplar), ArgumentError);
  const auto d = synthetic_load(1.0, 8, FactorSource::generated);
  EXPECT_NO_THROW(d.validate());
  for (int t = 2; t <= 8; ++t) EXPECT_GT(d.variance(t), d.variance(t - 1));
}

TEST(DisturbanceModel, RejectsNonCausalFactor) {
  auto d = synthetic_load(1.0, 3, FactorSource::generated);
  d.factor(0, 2) = 0.1;
  EXPECT_THROW(d.validate(), ArgumentError);
}

TEST(Kernel, ZeroLagAndHalfPeriod) {
  const KernelSpec k{0.7, 24.0, 1.3, 5.0, 0.2};
  EXPECT_NEAR(kernel_eval(k, 3.0, 3.0), 0.7 + 1.3 + 0.2, 1e-15);
  const KernelSpec cos_only{0.7, 24.0, 0.0, 5.0, 0.0};
  EXPECT_NEAR(kernel_eval(cos_only, 0.0, 12.0), -0.7, 1e-15);
  const KernelSpec far{0.0, 24.0, 1.3, 5.0, 0.2};
  EXPECT_NEAR(kernel_eval(far, 0.0, 1e4), 0.2, 1e-15);
  EXPECT_NEAR(kernel_eval(rbf_only(2.5, 3.0), 7.0, 7.0), 2.5, 1e-15);
}

TEST(Kernel, RejectsBadLengthscale) {
  EXPECT_THROW(kernel_eval(KernelSpec{1, 0.0, 1, 1, 0}, 0, 1), ArgumentError);
  EXPECT_THROW(gpr_posterior(grid_points(3), Eigen::VectorXd::Ones(3), rbf_only(1, -1), 1e-3, grid_points(2)),
               ArgumentError);
}

TEST(Kernel, GramMatricesArePositiveSemidefinite) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> pos(0.0, 48.0), var(0.01, 3.0), len(0.5, 30.0);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd x(20);
    for (auto& v : x) v = pos(rng);
    const KernelSpec k{var(rng), len(rng), var(rng), len(rng), var(rng)};
    const Eigen::MatrixXd g = kernel_matrix(k, x, x);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().minCoeff();
    EXPECT_GE(min_eig, -1e-9);
  }
}

TEST(Gpr, ConstantKernelPredictsTheTrainingMean) {
  // rank-one kernel sigma3: the posterior mean is n*s/(n*s + noise) * mean(y)
  Eigen::VectorXd t = grid_points(6), y(6);
  y << 1.0, 1.4, 0.8, 1.2, 0.9, 1.1;
  const KernelSpec k{0.0, 24.0, 0.0, 5.0, 1.0};
  const auto p = gpr_posterior(t, y, k, 1e-6, grid_points(3, 10.0));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.mean[i], y.mean(), 1e-3);
}

TEST(Gpr, InterpolatesTrainingPoints) {
  Eigen::VectorXd t = grid_points(10), y(10);
  for (int i = 0; i < 10; ++i) y[i] = std::sin(0.4 * i) + 0.1 * i;
  const auto p = gpr_posterior(t, y, rbf_only(1.0, 2.0), 1e-10, t);
  EXPECT_LT((p.mean - y).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT(p.covariance.diagonal().cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Gpr, FactorReproducesTheWhitenedCovariance) {
  Eigen::VectorXd t = grid_points(24), y(24);
  for (int i = 0; i < 24; ++i) y[i] = 2.0 + std::cos(2 * std::numbers::pi * i / 24.0);
  const KernelSpec k{0.5, 24.0, 1.0, 4.0, 0.1};
  const auto p = gpr_posterior(t, y, k, 1e-6, grid_points(12, 24.0));
  Eigen::MatrixXd whitened = p.covariance;
  whitened.diagonal().array() += kDefaultJitter;
  const Eigen::MatrixXd ffT = p.factor * p.factor.transpose();
  EXPECT_LT((ffT - whitened).norm() / whitened.norm(), 1e-8);
  EXPECT_TRUE(p.factor.isLowerTriangular(0.0));
  // against the raw covariance only the jitter differs
  EXPECT_LT((ffT - p.covariance).norm(), kDefaultJitter * std::sqrt(12.0) * (1 + 1e-6));
}

TEST(Gpr, FitProducesADisturbanceModel) {
  Eigen::VectorXd t = grid_points(24), y(24);
  for (int i = 0; i < 24; ++i) y[i] = 50 + 10 * std::sin(0.3 * i);
  const auto d = gpr_fit(t, y, rbf_only(100.0, 5.0), 1e-2, grid_points(12, 24.0), 0.01, 7);
  EXPECT_EQ(d.node, 7);
  EXPECT_EQ(d.horizon(), 12);
  EXPECT_NO_THROW(d.validate());
  EXPECT_TRUE(d.stochastic());
}

TEST(Gpr, MaximumLikelihoodDoesNotIncreaseTheObjective) {
  std::mt19937 rng(9);
  std::normal_distribution<double> noise(0.0, 0.05);
  Eigen::VectorXd t = grid_points(30), y(30);
  for (int i = 0; i < 30; ++i) y[i] = std::sin(2 * std::numbers::pi * i / 12.0) + noise(rng);
  const KernelSpec start{1.0, 24.0, 1.0, 5.0, 0.01};
  const double before = gpr_neg_log_likelihood(t, y, start, 0.1);
  const auto fitted = fit_hyperparameters(t, y, start, 0.1);
  EXPECT_LE(fitted.neg_log_likelihood, before);
  EXPECT_NEAR(fitted.neg_log_likelihood, gpr_neg_log_likelihood(t, y, fitted.kernel, fitted.noise), 1e-12);
}

TEST(TimeSeries, ReadsCsvAndForecasts) {
  const auto path = std::filesystem::temp_directory_path() / "ccopf_series_test.csv";
  {
    std::ofstream out(path);
    out << "time,value\n";
    for (int i = 0; i < 2; ++i) out << i << "," << 3.0 + i << "\n";
  }
  const TimeSeries ts = read_time_series_csv(path.string());
  ASSERT_EQ(ts.value.size(), 2u);
  GprForecastOptions opt;
  opt.fit = false;
  const auto d = gpr_forecast(ts, 12, opt, 4);
  EXPECT_EQ(d.factor.rows(), 12);
  EXPECT_EQ(d.factor.cols(), 12);
  EXPECT_TRUE(d.factor.isLowerTriangular(0.0));
  std::filesystem::remove(path);
}

TEST(TimeSeries, MissingFileNamesThePath) {
  try {
    read_time_series_csv("/nonexistent/wind.csv");
    FAIL() << "expected an error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/wind.csv"), std::string::npos);
  }
}

TEST(TimeSeries, RollingMean) {
  const auto m = rolling_mean({1, 2, 3, 4}, 2);
  EXPECT_EQ(m, (std::vector<double>{1, 1.5, 2.5, 3.5}));
}

TEST(DisturbanceJson, RoundTrip) {
  const auto d = synthetic_load(0.4, 12, FactorSource::exemplar, 0.5, 4);
  const auto back = disturbance_from_json(to_json(d));
  EXPECT_EQ(back.node, 4);
  EXPECT_EQ(back.mean, d.mean);
  EXPECT_EQ(back.factor, d.factor);
}
