#pragma once

// Monte Carlo audit of a solved policy: empirical chance-constraint violation
// rates, power-balance residuals and agreement of sample moments with the
// closed-form moments.
//
// Samples are processed in fixed chunks whose tallies are merged in chunk
// order, so the report is bit-identical for any number of workers.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ccopf/errors.hpp"
#include "ccopf/forecast.hpp"
#include "ccopf/grid.hpp"
#include "ccopf/moments.hpp"
#include "ccopf/policy.hpp"
#include "ccopf/random.hpp"
#include "ccopf/socp_builder.hpp"

namespace ccopf {

/// One side of one chance constraint.
struct ConstraintAudit {
  Quantity quantity = Quantity::generation;
  int element = 0;
  int t = 0;
  bool upper_side = true;
  double bound = 0.0;
  double epsilon = 0.05;
  double mean = 0.0;    // closed form
  double stddev = 0.0;  // closed form
  double slack = 0.0;   // distance of mean +- lambda*sigma from the bound, positive inside
  bool active = false;
  long long violations = 0;
  double rate = 0.0;
  double radius = 0.0;  // 3 sqrt(eps (1 - eps) / n)
  bool pass = true;     // rate <= eps + radius
};

/// Sample vs closed-form moments of one quantity at one time.
/// For storage_state, t counts the injections applied (0 = initial state).
struct MomentAudit {
  std::string quantity;
  int element = 0;
  int t = 0;
  double mean = 0.0, variance = 0.0;          // closed form
  double emp_mean = 0.0, emp_variance = 0.0;  // sample
  double z_mean = 0.0, z_variance = 0.0;      // differences in standard errors
};

struct ValidationSettings {
  long long samples = 100000;
  std::uint64_t seed = 1;
  int workers = 1;
  double active_slack = 1e-5;   // constraints closer than this count as active
  double balance_tol = 1e-6;
  double moment_z_limit = 4.0;
  double sigma_cap_tol = 1e-6;
};

struct ValidationReport {
  long long samples = 0;
  std::uint64_t seed = 0;
  std::vector<ConstraintAudit> constraints;
  std::vector<MomentAudit> moments;
  double max_balance_residual = 0.0;
  double max_moment_z = 0.0;
  double max_sigma_cap_excess = -std::numeric_limits<double>::infinity();
  bool chance_ok = true, balance_ok = true, moments_ok = true, sigma_cap_ok = true;

  bool passed() const { return chance_ok && balance_ok && moments_ok && sigma_cap_ok; }
};

namespace detail {

// Flat list of every random quantity, in a fixed order shared by the
// closed-form table and the per-sample extractor.
struct QuantityLayout {
  struct Key {
    std::string quantity;
    int element;
    int t;
    Moment moment;
  };
  std::vector<Key> keys;
  std::map<std::tuple<Quantity, int, int>, int> index;  // chance record -> key

  QuantityLayout(const GridModel& grid, const std::vector<DisturbanceModel>& dist, const AffinePolicySet& p) {
    const MomentTable mt = compute_moments(grid, dist, p);
    const int T = p.horizon;
    auto push = [&](const char* q, int element, int t, const Series& s, int pos) {
      keys.push_back({q, element, t, {s.mean[pos], s.variance[pos]}});
      return static_cast<int>(keys.size()) - 1;
    };
    for (const auto& d : dist)
      for (int t = 1; t <= T; ++t) push("disturbance", d.node, t, mt.disturbance.at(d.node), t - 1);
    for (const auto& r : p.generators)
      for (int t = 1; t <= T; ++t)
        index[{Quantity::generation, r.bus, t}] = push("generation", r.bus, t, mt.generation.at(r.bus), t - 1);
    for (const auto& r : p.generators)
      for (int t = 2; t <= T; ++t) index[{Quantity::ramp, r.bus, t}] = push("ramp", r.bus, t, mt.ramp.at(r.bus), t - 2);
    for (const auto& r : p.storages)
      for (int t = 1; t <= T; ++t)
        index[{Quantity::storage_injection, r.bus, t}] =
            push("storage_injection", r.bus, t, mt.storage_injection.at(r.bus), t - 1);
    for (const auto& r : p.storages)
      for (int t = 0; t <= T; ++t) {
        const int k = push("storage_state", r.bus, t, mt.storage_state.at(r.bus), t);
        if (t >= 1) index[{Quantity::storage_state, r.bus, t}] = k;
        if (t == T) index[{Quantity::storage_terminal, r.bus, t}] = k;
      }
    for (int l = 0; l < grid.num_lines(); ++l)
      for (int t = 1; t <= T; ++t)
        index[{Quantity::line_flow, l + 1, t}] = push("line_flow", l + 1, t, mt.line_flow[l], t - 1);
  }

  static void extract(const Trajectories& tr, std::vector<double>& out) {
    out.clear();
    for (const auto& d : tr.d) out.insert(out.end(), d.data(), d.data() + d.size());
    for (const auto& u : tr.u) out.insert(out.end(), u.data(), u.data() + u.size());
    for (const auto& u : tr.u)
      for (Eigen::Index t = 1; t < u.size(); ++t) out.push_back(u[t] - u[t - 1]);
    for (const auto& s : tr.s) out.insert(out.end(), s.data(), s.data() + s.size());
    for (const auto& e : tr.e) out.insert(out.end(), e.data(), e.data() + e.size());
    for (Eigen::Index l = 0; l < tr.c.rows(); ++l)
      for (Eigen::Index t = 0; t < tr.c.cols(); ++t) out.push_back(tr.c(l, t));
  }
};

struct ChunkTally {
  std::vector<double> s1, s2;        // shifted sums about the closed-form mean
  std::vector<long long> violations;  // per audited side
  double max_residual = 0.0;
};

}  // namespace detail

/// Draws `samples` germs, realizes the policy and audits it. `records` are
/// the chance constraints of the program the policy came from.
inline ValidationReport sample_and_audit(const GridModel& grid, const std::vector<DisturbanceModel>& dist,
                                         const AffinePolicySet& policy,
                                         const std::vector<ChanceConstraintRecord>& records,
                                         const ValidationSettings& vs) {
  if (vs.samples < 2) throw ArgumentError("validation needs at least two samples");
  if (vs.workers < 1) throw ArgumentError("validation needs at least one worker");
  for (const auto& d : dist)
    if (d.horizon() != policy.horizon) throw ArgumentError("policy horizon differs from the forecasts");

  const detail::QuantityLayout layout(grid, dist, policy);
  const std::size_t nq = layout.keys.size();
  const double n = static_cast<double>(vs.samples);

  ValidationReport rep;
  rep.samples = vs.samples;
  rep.seed = vs.seed;

  // sides to audit
  std::vector<int> side_key;
  for (const auto& rec : records) {
    const auto it = layout.index.find({rec.quantity, rec.element, rec.t});
    if (it == layout.index.end())
      throw ArgumentError(std::string("chance constraint on ") + to_string(rec.quantity) + " at " +
                          std::to_string(rec.element) + " has no counterpart in the policy");
    const Moment& m = layout.keys[it->second].moment;
    const double sd = std::sqrt(std::max(m.variance, 0.0));
    for (bool upper : {true, false}) {
      const double bound = upper ? rec.upper : rec.lower;
      if (!std::isfinite(bound)) continue;
      ConstraintAudit a;
      a.quantity = rec.quantity;
      a.element = rec.element;
      a.t = rec.t;
      a.upper_side = upper;
      a.bound = bound;
      a.epsilon = rec.epsilon;
      a.mean = m.mean;
      a.stddev = sd;
      a.slack = upper ? bound - m.mean - rec.lambda * sd : m.mean - rec.lambda * sd - bound;
      a.active = a.slack <= vs.active_slack;
      a.radius = 3.0 * std::sqrt(rec.epsilon * (1.0 - rec.epsilon) / n);
      rep.constraints.push_back(a);
      side_key.push_back(it->second);
    }
    if (rec.sigma_cap) {
      rep.max_sigma_cap_excess = std::max(rep.max_sigma_cap_excess, sd - *rec.sigma_cap);
      if (sd > *rec.sigma_cap + vs.sigma_cap_tol) rep.sigma_cap_ok = false;
    }
  }

  // sampling in fixed chunks
  constexpr long long chunk = 4096;
  const long long nchunks = (vs.samples + chunk - 1) / chunk;
  std::vector<detail::ChunkTally> tallies(nchunks);
  const PolicyRealizer realize(grid, dist, policy);
  const std::size_t nsites = policy.sites.size(), nsto = policy.storages.size();
  const int T = policy.horizon;

  auto run_chunk = [&](long long c) {
    detail::ChunkTally& tl = tallies[c];
    tl.s1.assign(nq, 0.0);
    tl.s2.assign(nq, 0.0);
    tl.violations.assign(rep.constraints.size(), 0);
    GermSample g;
    g.sites.assign(nsites, Eigen::VectorXd(T));
    g.initial.assign(nsto, 0.0);
    std::vector<double> x;
    const long long end = std::min(vs.samples, (c + 1) * chunk);
    for (long long i = c * chunk; i < end; ++i) {
      NormalStream rng(vs.seed, static_cast<std::uint64_t>(i));
      for (auto& v : g.sites)
        for (int t = 0; t < T; ++t) v[t] = rng();
      for (auto& v : g.initial) v = rng();
      const Trajectories tr = realize(g);
      tl.max_residual = std::max(tl.max_residual, balance_residual(tr));
      detail::QuantityLayout::extract(tr, x);
      for (std::size_t q = 0; q < nq; ++q) {
        const double dx = x[q] - layout.keys[q].moment.mean;
        tl.s1[q] += dx;
        tl.s2[q] += dx * dx;
      }
      for (std::size_t a = 0; a < rep.constraints.size(); ++a) {
        const ConstraintAudit& ca = rep.constraints[a];
        const double v = x[side_key[a]];
        // strict breach; ties count as satisfied
        if (ca.upper_side ? v > ca.bound : v < ca.bound) ++tl.violations[a];
      }
    }
  };

  const int workers = static_cast<int>(std::min<long long>(vs.workers, nchunks));
  if (workers <= 1) {
    for (long long c = 0; c < nchunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (long long c = w; c < nchunks; c += workers) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  // merge in chunk order
  std::vector<double> s1(nq, 0.0), s2(nq, 0.0);
  std::vector<long long> viol(rep.constraints.size(), 0);
  for (const auto& tl : tallies) {
    for (std::size_t q = 0; q < nq; ++q) {
      s1[q] += tl.s1[q];
      s2[q] += tl.s2[q];
    }
    for (std::size_t a = 0; a < viol.size(); ++a) viol[a] += tl.violations[a];
    rep.max_balance_residual = std::max(rep.max_balance_residual, tl.max_residual);
  }

  for (std::size_t a = 0; a < rep.constraints.size(); ++a) {
    auto& ca = rep.constraints[a];
    ca.violations = viol[a];
    ca.rate = static_cast<double>(viol[a]) / n;
    ca.pass = ca.rate <= ca.epsilon + ca.radius;
    rep.chance_ok = rep.chance_ok && ca.pass;
  }
  rep.balance_ok = rep.max_balance_residual <= vs.balance_tol;

  for (std::size_t q = 0; q < nq; ++q) {
    const auto& k = layout.keys[q];
    MomentAudit m;
    m.quantity = k.quantity;
    m.element = k.element;
    m.t = k.t;
    m.mean = k.moment.mean;
    m.variance = k.moment.variance;
    m.emp_mean = k.moment.mean + s1[q] / n;
    m.emp_variance = std::max(0.0, (s2[q] - s1[q] * s1[q] / n) / (n - 1.0));
    // Gaussian standard errors from the closed-form variance; a quantity
    // with (numerically) zero variance only has to agree to rounding
    const double scale = std::max(1.0, std::abs(k.moment.mean));
    if (m.variance > 1e-24 * scale * scale) {
      m.z_mean = std::abs(m.emp_mean - m.mean) / std::sqrt(m.variance / n);
      m.z_variance = std::abs(m.emp_variance - m.variance) / (m.variance * std::sqrt(2.0 / (n - 1.0)));
    } else {
      const double inf = std::numeric_limits<double>::infinity();
      m.z_mean = std::abs(m.emp_mean - m.mean) <= 1e-9 * scale ? 0.0 : inf;
      m.z_variance = m.emp_variance <= 1e-18 * scale * scale ? 0.0 : inf;
    }
    rep.max_moment_z = std::max({rep.max_moment_z, m.z_mean, m.z_variance});
    rep.moments.push_back(m);
  }
  rep.moments_ok = rep.max_moment_z <= vs.moment_z_limit;
  return rep;
}

inline nlohmann::json to_json(const ValidationReport& r) {
  using nlohmann::json;
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json cons = json::array();
  for (const auto& c : r.constraints)
    cons.push_back({{"quantity", to_string(c.quantity)},
                    {"element", c.element},
                    {"t", c.t},
                    {"side", c.upper_side ? "upper" : "lower"},
                    {"bound", c.bound},
                    {"epsilon", c.epsilon},
                    {"mean", c.mean},
                    {"stddev", c.stddev},
                    {"slack", c.slack},
                    {"active", c.active},
                    {"violations", c.violations},
                    {"rate", c.rate},
                    {"radius", c.radius},
                    {"pass", c.pass}});
  json mom = json::array();
  for (const auto& m : r.moments)
    mom.push_back({{"quantity", m.quantity},
                   {"element", m.element},
                   {"t", m.t},
                   {"mean", m.mean},
                   {"variance", m.variance},
                   {"empirical_mean", m.emp_mean},
                   {"empirical_variance", m.emp_variance},
                   {"z_mean", num(m.z_mean)},
                   {"z_variance", num(m.z_variance)}});
  return {{"samples", r.samples},
          {"seed", r.seed},
          {"generator", "philox4x32-10"},
          {"passed", r.passed()},
          {"chance_ok", r.chance_ok},
          {"balance_ok", r.balance_ok},
          {"moments_ok", r.moments_ok},
          {"sigma_cap_ok", r.sigma_cap_ok},
          {"max_balance_residual", r.max_balance_residual},
          {"max_moment_z", num(r.max_moment_z)},
          {"max_sigma_cap_excess", num(r.max_sigma_cap_excess)},
          {"constraints", cons},
          {"moments", mom}};
}

/// Human-readable summary: the audit verdicts plus the active and failing
/// constraint sides.
inline std::string format_report(const ValidationReport& r) {
  std::ostringstream os;
  os << "samples " << r.samples << "  seed " << r.seed << "\n";
  os << "chance constraints   " << (r.chance_ok ? "ok" : "FAILED") << "\n";
  os << "balance residual     " << (r.balance_ok ? "ok" : "FAILED") << "  max " << std::scientific
     << std::setprecision(2) << r.max_balance_residual << "\n";
  os << "moments              " << (r.moments_ok ? "ok" : "FAILED") << "  max z " << std::fixed
     << std::setprecision(2) << r.max_moment_z << "\n";
  if (std::isfinite(r.max_sigma_cap_excess))
    os << "sigma caps           " << (r.sigma_cap_ok ? "ok" : "FAILED") << "  max excess " << std::scientific
       << std::setprecision(2) << r.max_sigma_cap_excess << "\n";
  os << "\n" << std::left << std::setw(18) << "quantity" << std::right << std::setw(6) << "elem" << std::setw(4)
     << "t" << std::setw(7) << "side" << std::setw(11) << "slack" << std::setw(9) << "rate" << std::setw(9) << "limit"
     << "  status\n";
  int shown = 0;
  for (const auto& c : r.constraints) {
    if (!c.active && c.pass) continue;
    ++shown;
    os << std::left << std::setw(18) << to_string(c.quantity) << std::right << std::setw(6) << c.element
       << std::setw(4) << c.t << std::setw(7) << (c.upper_side ? "upper" : "lower") << std::scientific
       << std::setprecision(2) << std::setw(11) << c.slack << std::fixed << std::setprecision(4) << std::setw(9)
       << c.rate << std::setw(9) << c.epsilon + c.radius << "  " << (c.pass ? (c.active ? "active" : "ok") : "FAIL")
       << "\n";
  }
  os << shown << " of " << r.constraints.size() << " constraint sides shown (active or failing)\n";
  return os.str();
}

}  // namespace ccopf
