#pragma once

// Closed-form means and variances of every random quantity under affine
// policies, Monte Carlo realization of policies, and decision-variable counts.
//
// Time indices in the public functions are 1-based; line indices are 1-based.
// The storage state array has T+1 slots: slot 1 is the initial condition and
// slot t+1 the state after injection s(t).

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

#include "ccopf/errors.hpp"
#include "ccopf/forecast.hpp"
#include "ccopf/grid.hpp"
#include "ccopf/policy.hpp"

namespace ccopf {

struct Moment {
  double mean = 0.0;
  double variance = 0.0;
};

inline Moment moments_disturbance(const DisturbanceModel& d, int t) {
  if (t < 1 || t > d.horizon()) throw ArgumentError("time index out of range");
  return {d.mean[t - 1], d.variance(t)};
}

namespace detail {

inline const ResponderPolicy& find_responder(const std::vector<ResponderPolicy>& group, int bus, const char* what) {
  for (const auto& r : group)
    if (r.bus == bus) return r;
  throw ArgumentError(std::string("bus ") + std::to_string(bus) + " is not a " + what + " of the policy");
}

inline Moment responder_moment(const AffinePolicySet& p, const ResponderPolicy& r, int t) {
  if (t < 1 || t > p.horizon) throw ArgumentError("time index out of range");
  double var = 0.0;
  for (std::size_t j = 0; j < p.sites.size(); ++j) {
    const auto& g = p.gain(r, j);
    for (int k = 0; k < t; ++k) var += g(t - 1, k) * g(t - 1, k);
  }
  return {r.nominal[t - 1], var};
}

}  // namespace detail

inline Moment moments_generation(const AffinePolicySet& p, int bus, int t) {
  return detail::responder_moment(p, detail::find_responder(p.generators, bus, "generator"), t);
}

inline Moment moments_storage_injection(const AffinePolicySet& p, int bus, int t) {
  return detail::responder_moment(p, detail::find_responder(p.storages, bus, "storage"), t);
}

/// Moments of e(t+1), the state after t injections (t = 0 gives the initial condition).
inline Moment moments_storage_state(const AffinePolicySet& p, const StorageSpec& spec, int t) {
  const auto& r = detail::find_responder(p.storages, spec.bus, "storage");
  if (t < 0 || t > p.horizon) throw ArgumentError("time index out of range");
  Moment m{spec.e_initial_mean, spec.e_initial_var};
  for (int k = 0; k < t; ++k) m.mean -= spec.h * r.nominal[k];
  for (std::size_t j = 0; j < p.sites.size(); ++j) {
    const auto& g = p.gain(r, j);
    for (int k = 0; k < t; ++k) {
      double col = 0.0;
      for (int l = k; l < t; ++l) col += g(l, k);
      m.variance += spec.h * spec.h * col * col;
    }
  }
  return m;
}

/// Moments of u(tau) - u(tau - 1), 2 <= tau <= T.
inline Moment moments_ramp(const AffinePolicySet& p, int bus, int tau) {
  const auto& r = detail::find_responder(p.generators, bus, "generator");
  if (tau < 2 || tau > p.horizon) throw ArgumentError("ramp index must lie in 2..T");
  Moment m{r.nominal[tau - 1] - r.nominal[tau - 2], 0.0};
  for (std::size_t j = 0; j < p.sites.size(); ++j) {
    const auto& g = p.gain(r, j);
    m.variance += g(tau - 1, tau - 1) * g(tau - 1, tau - 1);
    for (int k = 0; k < tau - 1; ++k) {
      const double diff = g(tau - 1, k) - g(tau - 2, k);
      m.variance += diff * diff;
    }
  }
  return m;
}

namespace detail {

/// Index bookkeeping shared by the moment table and the realizer.
struct SystemIndex {
  std::vector<int> dist_bus;    // bus index of each disturbance
  std::vector<int> dist_site;   // policy site position or -1
  std::vector<int> site_dist;   // disturbance position of each policy site
  std::vector<int> gen_bus, sto_bus;
  std::vector<const StorageSpec*> sto_spec;

  SystemIndex(const GridModel& g, const std::vector<DisturbanceModel>& dist, const AffinePolicySet& p) {
    p.validate();
    site_dist.assign(p.sites.size(), -1);
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (dist[i].horizon() != p.horizon)
        throw ArgumentError("disturbance horizon " + std::to_string(dist[i].horizon()) + " differs from policy horizon " +
                            std::to_string(p.horizon));
      dist_bus.push_back(g.bus_index(dist[i].node));
      const int pos = p.site_position(dist[i].node);
      dist_site.push_back(pos);
      if (pos >= 0) site_dist[pos] = static_cast<int>(i);
      else if (dist[i].stochastic())
        throw ArgumentError("stochastic disturbance at bus " + std::to_string(dist[i].node) +
                            " is not a site of the policy");
    }
    for (const auto& r : p.generators) gen_bus.push_back(g.bus_index(r.bus));
    for (const auto& r : p.storages) {
      sto_bus.push_back(g.bus_index(r.bus));
      const StorageSpec* s = g.storage_at(r.bus);
      if (!s) throw ArgumentError("policy storage at bus " + std::to_string(r.bus) + " is not in the grid");
      sto_spec.push_back(s);
    }
  }
};

}  // namespace detail

inline Moment moments_line_flow(const GridModel& grid, const std::vector<DisturbanceModel>& dist,
                                const AffinePolicySet& p, int line, int t) {
  if (line < 1 || line > grid.num_lines()) throw ArgumentError("line index out of range");
  if (t < 1 || t > p.horizon) throw ArgumentError("time index out of range");
  const detail::SystemIndex ix(grid, dist, p);
  const auto phi = grid.ptdf.row(line - 1);
  Moment m;
  for (std::size_t i = 0; i < dist.size(); ++i) m.mean += phi[ix.dist_bus[i]] * dist[i].mean[t - 1];
  for (std::size_t r = 0; r < p.generators.size(); ++r) m.mean += phi[ix.gen_bus[r]] * p.generators[r].nominal[t - 1];
  for (std::size_t r = 0; r < p.storages.size(); ++r) m.mean += phi[ix.sto_bus[r]] * p.storages[r].nominal[t - 1];
  for (std::size_t j = 0; j < p.sites.size(); ++j) {
    const int di = ix.site_dist[j];
    for (int k = 0; k < t; ++k) {
      double v = di >= 0 ? phi[ix.dist_bus[di]] * dist[di].factor(t - 1, k) : 0.0;
      for (std::size_t r = 0; r < p.generators.size(); ++r)
        v += phi[ix.gen_bus[r]] * p.gain(p.generators[r], j)(t - 1, k);
      for (std::size_t r = 0; r < p.storages.size(); ++r)
        v += phi[ix.sto_bus[r]] * p.gain(p.storages[r], j)(t - 1, k);
      m.variance += v * v;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Moment table

struct Series {
  std::vector<double> mean;
  std::vector<double> variance;
  void push(const Moment& m) {
    mean.push_back(m.mean);
    variance.push_back(m.variance);
  }
};

/// Moments of all quantities. Keys are bus ids; `ramp` holds tau = 2..T at
/// positions 0..T-2; `storage_state` holds e(1..T+1); `line_flow` is per line.
struct MomentTable {
  int horizon = 0;
  std::map<int, Series> disturbance, generation, storage_injection, storage_state, ramp;
  std::vector<Series> line_flow;
};

inline MomentTable compute_moments(const GridModel& grid, const std::vector<DisturbanceModel>& dist,
                                   const AffinePolicySet& p) {
  const detail::SystemIndex ix(grid, dist, p);
  const int T = p.horizon, nl = grid.num_lines();
  MomentTable mt;
  mt.horizon = T;
  for (const auto& d : dist)
    for (int t = 1; t <= T; ++t) mt.disturbance[d.node].push(moments_disturbance(d, t));
  for (const auto& r : p.generators) {
    for (int t = 1; t <= T; ++t) mt.generation[r.bus].push(detail::responder_moment(p, r, t));
    for (int t = 2; t <= T; ++t) mt.ramp[r.bus].push(moments_ramp(p, r.bus, t));
  }
  for (std::size_t r = 0; r < p.storages.size(); ++r) {
    for (int t = 1; t <= T; ++t) mt.storage_injection[p.storages[r].bus].push(detail::responder_moment(p, p.storages[r], t));
    for (int t = 0; t <= T; ++t) mt.storage_state[p.storages[r].bus].push(moments_storage_state(p, *ix.sto_spec[r], t));
  }
  // line flows: vectorized over lines
  const Eigen::MatrixXd& phi = grid.ptdf;
  mt.line_flow.assign(nl, Series{});
  for (int t = 1; t <= T; ++t) {
    Eigen::VectorXd p_hat = Eigen::VectorXd::Zero(grid.num_buses());
    for (std::size_t i = 0; i < dist.size(); ++i) p_hat[ix.dist_bus[i]] += dist[i].mean[t - 1];
    for (std::size_t r = 0; r < p.generators.size(); ++r) p_hat[ix.gen_bus[r]] += p.generators[r].nominal[t - 1];
    for (std::size_t r = 0; r < p.storages.size(); ++r) p_hat[ix.sto_bus[r]] += p.storages[r].nominal[t - 1];
    const Eigen::VectorXd mean = phi * p_hat;
    Eigen::VectorXd var = Eigen::VectorXd::Zero(nl);
    for (std::size_t j = 0; j < p.sites.size(); ++j) {
      const int di = ix.site_dist[j];
      for (int k = 0; k < t; ++k) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(nl);
        if (di >= 0) v += phi.col(ix.dist_bus[di]) * dist[di].factor(t - 1, k);
        for (std::size_t r = 0; r < p.generators.size(); ++r)
          v += phi.col(ix.gen_bus[r]) * p.gain(p.generators[r], j)(t - 1, k);
        for (std::size_t r = 0; r < p.storages.size(); ++r)
          v += phi.col(ix.sto_bus[r]) * p.gain(p.storages[r], j)(t - 1, k);
        var += v.cwiseAbs2();
      }
    }
    for (int l = 0; l < nl; ++l) mt.line_flow[l].push({mean[l], var[l]});
  }
  return mt;
}

inline nlohmann::json to_json(const MomentTable& mt) {
  using nlohmann::json;
  auto series = [](const Series& s) { return json{{"mean", s.mean}, {"variance", s.variance}}; };
  auto group = [&](const std::map<int, Series>& g) {
    json arr = json::array();
    for (const auto& [bus, s] : g) {
      json e = series(s);
      e["bus"] = bus;
      arr.push_back(e);
    }
    return arr;
  };
  json lines = json::array();
  for (std::size_t l = 0; l < mt.line_flow.size(); ++l) {
    json e = series(mt.line_flow[l]);
    e["line"] = l + 1;
    lines.push_back(e);
  }
  return {{"horizon", mt.horizon},
          {"disturbance", group(mt.disturbance)},
          {"generation", group(mt.generation)},
          {"ramp", group(mt.ramp)},
          {"storage_injection", group(mt.storage_injection)},
          {"storage_state", group(mt.storage_state)},
          {"line_flow", lines}};
}

// ---------------------------------------------------------------------------
// Decision-variable counts

inline long long count_decision_variables(int n_u, int n_s, int n_d, int T, Balancing b) {
  const long long tri = static_cast<long long>(T) * (T + 1) / 2;
  const long long per = b == Balancing::local ? T + static_cast<long long>(n_d) * tri : T + tri;
  return static_cast<long long>(n_u + n_s) * per;
}

inline long long count_decision_variables(const GridModel& grid, int T, Balancing b) {
  return count_decision_variables(static_cast<int>(grid.generators.size()), static_cast<int>(grid.storages.size()),
                                  static_cast<int>(grid.disturbance_sites().size()), T, b);
}

// ---------------------------------------------------------------------------
// Policy realization

/// Standard-normal germ: one length-T vector per policy site, plus one scalar
/// per storage for the initial state.
struct GermSample {
  std::vector<Eigen::VectorXd> sites;
  std::vector<double> initial;
};

struct Trajectories {
  std::vector<Eigen::VectorXd> d;  // per disturbance (input order)
  std::vector<Eigen::VectorXd> u;  // per policy generator
  std::vector<Eigen::VectorXd> s;  // per policy storage
  std::vector<Eigen::VectorXd> e;  // per policy storage, T+1 entries
  Eigen::MatrixXd p;               // net injection, buses x T
  Eigen::MatrixXd c;               // line flows, lines x T
};

/// Exact affine evaluation of all trajectories for one germ.
class PolicyRealizer {
public:
  PolicyRealizer(const GridModel& grid, const std::vector<DisturbanceModel>& dist, const AffinePolicySet& p)
      : grid_(grid), dist_(dist), p_(p), ix_(grid, dist, p) {}

  Trajectories operator()(const GermSample& g) const {
    const int T = p_.horizon;
    if (g.sites.size() != p_.sites.size()) throw ArgumentError("germ has the wrong number of sites");
    for (const auto& v : g.sites)
      if (v.size() != T) throw ArgumentError("germ vector length differs from horizon");
    Trajectories tr;
    tr.p = Eigen::MatrixXd::Zero(grid_.num_buses(), T);
    for (std::size_t i = 0; i < dist_.size(); ++i) {
      Eigen::VectorXd d = dist_[i].mean;
      const int site = ix_.dist_site[i];
      if (site >= 0) d.noalias() += dist_[i].factor * g.sites[site];
      tr.p.row(ix_.dist_bus[i]) += d.transpose();
      tr.d.push_back(std::move(d));
    }
    auto respond = [&](const ResponderPolicy& r) {
      Eigen::VectorXd x = r.nominal;
      for (std::size_t j = 0; j < p_.sites.size(); ++j) {
        const auto& gain = p_.gain(r, j);
        const Eigen::VectorXd& xi = g.sites[j];
        for (int t = 0; t < T; ++t) {
          double acc = 0.0;
          for (int k = 0; k <= t; ++k) acc += gain(t, k) * xi[k];
          x[t] += acc;
        }
      }
      return x;
    };
    for (std::size_t r = 0; r < p_.generators.size(); ++r) {
      tr.u.push_back(respond(p_.generators[r]));
      tr.p.row(ix_.gen_bus[r]) += tr.u.back().transpose();
    }
    for (std::size_t r = 0; r < p_.storages.size(); ++r) {
      tr.s.push_back(respond(p_.storages[r]));
      tr.p.row(ix_.sto_bus[r]) += tr.s.back().transpose();
      const StorageSpec& spec = *ix_.sto_spec[r];
      Eigen::VectorXd e(T + 1);
      const double xi0 = r < g.initial.size() ? g.initial[r] : 0.0;
      e[0] = spec.e_initial_mean + std::sqrt(spec.e_initial_var) * xi0;
      for (int t = 0; t < T; ++t) e[t + 1] = e[t] - spec.h * tr.s.back()[t];
      tr.e.push_back(std::move(e));
    }
    tr.c = grid_.ptdf * tr.p;
    return tr;
  }

  const AffinePolicySet& policy() const noexcept { return p_; }

private:
  const GridModel& grid_;
  const std::vector<DisturbanceModel>& dist_;
  const AffinePolicySet& p_;
  detail::SystemIndex ix_;
};

inline Trajectories realize_policy(const GridModel& grid, const std::vector<DisturbanceModel>& dist,
                                   const AffinePolicySet& p, const GermSample& g) {
  return PolicyRealizer(grid, dist, p)(g);
}

/// max_t |sum_i p_i(t)|.
inline double balance_residual(const Trajectories& tr) {
  return tr.p.cols() ? tr.p.colwise().sum().cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace ccopf
