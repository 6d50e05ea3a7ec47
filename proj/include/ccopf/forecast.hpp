#pragma once

// Disturbance forecasts: per-bus mean vector and lower-triangular factor over
// the horizon, d = mean + factor * xi with xi standard normal. Produced either
// synthetically (sinusoidal loads plus a fixed 12-step exemplar factor) or by
// Gaussian process regression on a time series.
//
// Sign convention: consumption is negative, feed-in positive, so that the net
// injections of all buses sum to zero.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ccopf/errors.hpp"
#include "ccopf/grid.hpp"

namespace ccopf {

struct DisturbanceModel {
  int node = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;  // lower-triangular, zero for certain disturbances

  int horizon() const noexcept { return static_cast<int>(mean.size()); }
  bool stochastic() const { return factor.size() > 0 && !factor.isZero(0.0); }

  /// V(d(t)) for 1-based t.
  double variance(int t) const { return factor.row(t - 1).head(t).squaredNorm(); }

  Eigen::VectorXd sample(const Eigen::VectorXd& germ) const { return mean + factor * germ; }

  void validate() const {
    const int n = horizon();
    if (factor.rows() != n || factor.cols() != n)
      throw ArgumentError("disturbance at bus " + std::to_string(node) + ": factor must be " + std::to_string(n) +
                          "x" + std::to_string(n));
    for (int t = 0; t < n; ++t)
      for (int k = t + 1; k < n; ++k)
        if (factor(t, k) != 0.0)
          throw ArgumentError("disturbance at bus " + std::to_string(node) + ": factor is not lower-triangular");
    if (!mean.allFinite() || !factor.allFinite())
      throw ArgumentError("disturbance at bus " + std::to_string(node) + ": non-finite entries");
  }
};

/// The fixed 12 x 12 exemplar factor (already scaled by 1e-4).
inline Eigen::MatrixXd exemplar_factor() {
  static constexpr std::array<std::array<int, 12>, 12> raw{{
      {87, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {176, 20, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {292, 60, 7, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {434, 124, 26, 3, 0, 0, 0, 0, 0, 0, 0, 0},
      {594, 211, 63, 13, 3, 0, 0, 0, 0, 0, 0, 0},
      {764, 321, 123, 31, 13, 3, 0, 0, 0, 0, 0, 0},
      {937, 447, 208, 63, 32, 11, 3, 0, 0, 0, 0, 0},
      {1103, 582, 317, 109, 65, 27, 10, 3, 0, 0, 0, 0},
      {1257, 718, 447, 172, 116, 55, 26, 10, 3, 0, 0, 0},
      {1392, 847, 591, 251, 184, 98, 53, 26, 10, 3, 0, 0},
      {1504, 964, 741, 342, 271, 156, 94, 53, 24, 9, 3, 0},
      {1590, 1063, 889, 441, 371, 229, 151, 94, 50, 24, 9, 3},
  }};
  Eigen::MatrixXd m(12, 12);
  for (int t = 0; t < 12; ++t)
    for (int k = 0; k < 12; ++k) m(t, k) = raw[t][k] * 1e-4;
  return m;
}

/// Lower-triangular factor for horizons other than 12 (an extension: the
/// exemplar has no generator). Column 1 grows like the exemplar's first
/// column and later columns decay geometrically, so row norms increase in t.
inline Eigen::MatrixXd generated_factor(int T) {
  if (T < 1) throw ArgumentError("horizon must be at least 1");
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(T, T);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k <= t; ++k) m(t, k) = 0.0087 * std::pow(t - k + 1, 1.2) * std::pow(0.55, k);
  return m;
}

enum class FactorSource { none, exemplar, generated };

/// Sinusoidal profile around a case-file nominal value (consumption positive in
/// `nominal`), stored with consumption negative. Stochastic sites get the
/// negated (scaled) factor.
inline DisturbanceModel synthetic_load(double nominal, int T, FactorSource source = FactorSource::none,
                                       double factor_scale = 1.0, int node = 0) {
  if (T < 1) throw ArgumentError("horizon must be at least 1");
  DisturbanceModel d;
  d.node = node;
  d.mean.resize(T);
  for (int t = 1; t <= T; ++t)
    d.mean[t - 1] = -nominal * (1.0 + 0.1 * std::sin(2.0 * std::numbers::pi * (t - 1) / T));
  switch (source) {
    case FactorSource::none:
      d.factor = Eigen::MatrixXd::Zero(T, T);
      break;
    case FactorSource::exemplar:
      if (T != 12) throw ArgumentError("the exemplar factor is fixed at 12 steps; horizon " + std::to_string(T));
      d.factor = -factor_scale * exemplar_factor();
      break;
    case FactorSource::generated:
      d.factor = -factor_scale * generated_factor(T);
      break;
  }
  return d;
}

/// One synthetic model per disturbance of the grid, in bus order. Stochastic
/// sites use the exemplar when T = 12 and the generated factor otherwise.
inline std::vector<DisturbanceModel> synthetic_forecasts(const GridModel& grid, int T,
                                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<DisturbanceModel> out;
  bool extended = false;
  for (const auto& d : grid.disturbances) {
    FactorSource src = FactorSource::none;
    if (d.stochastic) {
      src = T == 12 ? FactorSource::exemplar : FactorSource::generated;
      extended = extended || T != 12;
    }
    out.push_back(synthetic_load(d.nominal, T, src, d.factor_scale, d.bus));
  }
  if (extended && warnings)
    warnings->push_back("horizon " + std::to_string(T) + " != 12: stochastic sites use a generated factor");
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian process regression

struct KernelSpec {
  double cos_variance = 1.0;      // sigma_1^2
  double cos_lengthscale = 24.0;  // l_1 (period)
  double rbf_variance = 1.0;      // sigma_2^2
  double rbf_lengthscale = 5.0;   // l_2
  double constant = 0.0;          // sigma_3

  void validate() const {
    if (!(cos_lengthscale > 0 && rbf_lengthscale > 0)) throw ArgumentError("kernel lengthscales must be positive");
    if (cos_variance < 0 || rbf_variance < 0 || constant < 0) throw ArgumentError("kernel variances must be >= 0");
  }
};

inline double kernel_eval(const KernelSpec& k, double x, double y) {
  if (!(k.cos_lengthscale > 0 && k.rbf_lengthscale > 0)) throw ArgumentError("kernel lengthscales must be positive");
  const double r = x - y;
  return k.cos_variance * std::cos(2.0 * std::numbers::pi * r / k.cos_lengthscale) +
         k.rbf_variance * std::exp(-r * r / (2.0 * k.rbf_lengthscale * k.rbf_lengthscale)) + k.constant;
}

inline Eigen::MatrixXd kernel_matrix(const KernelSpec& k, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::MatrixXd m(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j) m(i, j) = kernel_eval(k, a[i], b[j]);
  return m;
}

struct GprPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // without jitter
  Eigen::MatrixXd factor;      // chol(covariance + jitter I)
};

inline constexpr double kDefaultJitter = 1e-7;

/// Standard GP conditional with zero prior mean.
inline GprPosterior gpr_posterior(const Eigen::VectorXd& train_t, const Eigen::VectorXd& train_y,
                                  const KernelSpec& kernel, double noise, const Eigen::VectorXd& horizon,
                                  double jitter = kDefaultJitter) {
  kernel.validate();
  if (train_t.size() < 2 || train_t.size() != train_y.size())
    throw ArgumentError("GPR needs at least two training points with matching values");
  if (horizon.size() == 0) throw ArgumentError("GPR horizon is empty");
  if (noise < 0) throw ArgumentError("GPR noise must be >= 0");
  Eigen::MatrixXd K = kernel_matrix(kernel, train_t, train_t);
  K.diagonal().array() += noise;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success)
    throw NumericalError("training covariance is not positive definite; increase the noise variance");
  const Eigen::MatrixXd Ks = kernel_matrix(kernel, train_t, horizon);
  const Eigen::MatrixXd Kss = kernel_matrix(kernel, horizon, horizon);
  GprPosterior p;
  p.mean = Ks.transpose() * llt.solve(train_y);
  const Eigen::MatrixXd v = llt.matrixL().solve(Ks);
  p.covariance = Kss - v.transpose() * v;
  p.covariance = 0.5 * (p.covariance + p.covariance.transpose());
  Eigen::MatrixXd whitened = p.covariance;
  whitened.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> post(whitened);
  if (post.info() != Eigen::Success)
    throw NumericalError("posterior covariance is not positive definite after jitter " + std::to_string(jitter) +
                         "; use a larger jitter");
  p.factor = post.matrixL();
  return p;
}

/// Disturbance model from a GPR fit. `scale` maps data units to per-unit
/// injections (feed-in positive), e.g. 1/base_mva for MW of wind output.
inline DisturbanceModel gpr_fit(const Eigen::VectorXd& train_t, const Eigen::VectorXd& train_y,
                                const KernelSpec& kernel, double noise, const Eigen::VectorXd& horizon,
                                double scale = 1.0, int node = 0, double jitter = kDefaultJitter) {
  const GprPosterior p = gpr_posterior(train_t, train_y, kernel, noise, horizon, jitter);
  DisturbanceModel d;
  d.node = node;
  d.mean = scale * p.mean;
  d.factor = std::abs(scale) * p.factor;
  return d;
}

/// Negative log marginal likelihood of the training data.
inline double gpr_neg_log_likelihood(const Eigen::VectorXd& t, const Eigen::VectorXd& y, const KernelSpec& k,
                                     double noise) {
  Eigen::MatrixXd K = kernel_matrix(k, t, t);
  K.diagonal().array() += noise + kDefaultJitter;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = llt.solve(y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * y.dot(alpha) + 0.5 * logdet + 0.5 * static_cast<double>(t.size()) * std::log(2.0 * std::numbers::pi);
}

struct HyperparameterBounds {
  double min_variance = 1e-6, max_variance = 1e4;
  double min_lengthscale = 0.5, max_lengthscale = 1e3;
  double min_noise = 1e-6, max_noise = 1e2;
};

struct FittedHyperparameters {
  KernelSpec kernel;
  double noise = 1e-6;
  double neg_log_likelihood = 0.0;
};

/// Maximum-likelihood hyperparameters by coordinate descent over the
/// log-parameters (gradient free), starting from `initial`.
inline FittedHyperparameters fit_hyperparameters(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                                                 const KernelSpec& initial, double initial_noise,
                                                 const HyperparameterBounds& bounds = {}, int sweeps = 30) {
  initial.validate();
  std::array<double, 6> p{std::log(std::max(initial.cos_variance, bounds.min_variance)),
                          std::log(initial.cos_lengthscale),
                          std::log(std::max(initial.rbf_variance, bounds.min_variance)),
                          std::log(initial.rbf_lengthscale),
                          std::log(std::max(initial.constant, bounds.min_variance)),
                          std::log(std::max(initial_noise, bounds.min_noise))};
  const std::array<double, 6> lo{std::log(bounds.min_variance),    std::log(bounds.min_lengthscale),
                                 std::log(bounds.min_variance),    std::log(bounds.min_lengthscale),
                                 std::log(bounds.min_variance),    std::log(bounds.min_noise)};
  const std::array<double, 6> hi{std::log(bounds.max_variance),    std::log(bounds.max_lengthscale),
                                 std::log(bounds.max_variance),    std::log(bounds.max_lengthscale),
                                 std::log(bounds.max_variance),    std::log(bounds.max_noise)};
  auto unpack = [](const std::array<double, 6>& q) {
    KernelSpec k{std::exp(q[0]), std::exp(q[1]), std::exp(q[2]), std::exp(q[3]), std::exp(q[4])};
    return std::make_pair(k, std::exp(q[5]));
  };
  auto objective = [&](const std::array<double, 6>& q) {
    const auto [k, noise] = unpack(q);
    return gpr_neg_log_likelihood(t, y, k, noise);
  };
  for (int i = 0; i < 6; ++i) p[i] = std::clamp(p[i], lo[i], hi[i]);
  double best = objective(p);
  double step = 1.0;
  for (int sweep = 0; sweep < sweeps && step > 1e-3; ++sweep) {
    bool improved = false;
    for (int i = 0; i < 6; ++i) {
      for (double dir : {1.0, -1.0}) {
        auto q = p;
        q[i] = std::clamp(p[i] + dir * step, lo[i], hi[i]);
        const double v = objective(q);
        if (v < best) {
          best = v;
          p = q;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  const auto [k, noise] = unpack(p);
  return {k, noise, best};
}

// ---------------------------------------------------------------------------
// Time-series ingestion

struct TimeSeries {
  std::vector<double> time;
  std::vector<double> value;
};

/// Reads `timestamp,value` rows (an optional header is skipped). Numeric
/// timestamps are kept; otherwise rows are indexed 0, 1, 2, ...
inline TimeSeries read_time_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open time series: " + path);
  TimeSeries ts;
  std::string line;
  int line_no = 0;
  bool numeric_time = true;
  std::vector<std::string> stamps;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    const std::string& vcell = cells.back();
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(vcell, &used);
      if (used != vcell.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      if (ts.value.empty() && stamps.empty()) continue;  // header
      throw ParseError(path + ": bad value '" + vcell + "'", line_no);
    }
    ts.value.push_back(v);
    stamps.push_back(cells.size() > 1 ? cells.front() : std::string());
  }
  for (const auto& s : stamps) {
    try {
      std::size_t used = 0;
      std::stod(s, &used);
      if (used != s.size()) numeric_time = false;
    } catch (const std::exception&) {
      numeric_time = false;
    }
    if (!numeric_time) break;
  }
  for (std::size_t i = 0; i < stamps.size(); ++i)
    ts.time.push_back(numeric_time ? std::stod(stamps[i]) : static_cast<double>(i));
  if (ts.value.size() < 2) throw ParseError(path + ": need at least two samples");
  return ts;
}

/// Trailing rolling mean; the first window-1 entries average what is available.
inline std::vector<double> rolling_mean(const std::vector<double>& v, int window) {
  if (window < 1) throw ArgumentError("rolling window must be >= 1");
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window)) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

struct GprForecastOptions {
  KernelSpec kernel;
  double noise = 1e-2;
  bool fit = true;      // maximum-likelihood hyperparameters
  int smoothing = 1;    // rolling window, 1 = none
  int train_points = 0; // 0 = all
  double scale = 1.0;   // data units -> per-unit injection
  double jitter = kDefaultJitter;
};

/// Forecast of the T steps following the series. Times are re-indexed to
/// steps 0..n-1 and the horizon is n..n+T-1.
inline DisturbanceModel gpr_forecast(const TimeSeries& ts, int T, const GprForecastOptions& opt, int node = 0) {
  if (T < 1) throw ArgumentError("horizon must be at least 1");
  std::vector<double> y = opt.smoothing > 1 ? rolling_mean(ts.value, opt.smoothing) : ts.value;
  std::size_t start = 0;
  if (opt.train_points > 0 && static_cast<std::size_t>(opt.train_points) < y.size())
    start = y.size() - static_cast<std::size_t>(opt.train_points);
  const Eigen::Index n = static_cast<Eigen::Index>(y.size() - start);
  Eigen::VectorXd t(n), yy(n), h(T);
  for (Eigen::Index i = 0; i < n; ++i) {
    t[i] = static_cast<double>(i);
    yy[i] = y[start + static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < T; ++i) h[i] = static_cast<double>(n + i);
  KernelSpec k = opt.kernel;
  double noise = opt.noise;
  if (opt.fit) {
    const auto fitted = fit_hyperparameters(t, yy, k, noise);
    k = fitted.kernel;
    noise = fitted.noise;
  }
  return gpr_fit(t, yy, k, noise, h, opt.scale, node, opt.jitter);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const DisturbanceModel& d) {
  nlohmann::json f = nlohmann::json::array();
  for (int t = 0; t < d.factor.rows(); ++t) {
    std::vector<double> row(d.factor.cols());
    for (int k = 0; k < d.factor.cols(); ++k) row[k] = d.factor(t, k);
    f.push_back(row);
  }
  return {{"node", d.node}, {"mean", std::vector<double>(d.mean.data(), d.mean.data() + d.mean.size())}, {"factor", f}};
}

inline DisturbanceModel disturbance_from_json(const nlohmann::json& j) {
  DisturbanceModel d;
  try {
    d.node = j.at("node").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    d.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    const auto rows = j.at("factor").get<std::vector<std::vector<double>>>();
    d.factor = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                     rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != rows.front().size()) throw ParseError("ragged factor matrix");
      for (std::size_t k = 0; k < rows[t].size(); ++k) d.factor(t, k) = rows[t][k];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("disturbance JSON: ") + e.what());
  }
  d.validate();
  return d;
}

}  // namespace ccopf
