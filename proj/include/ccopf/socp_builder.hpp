#pragma once

// Assembly of the second-order cone program for the chance-constrained
// multi-period DC OPF under affine policies.
//
// Every chance-constrained quantity x has an affine mean E(x) and a list of
// affine "sigma rows" whose Euclidean norm is its standard deviation. Each such
// quantity gets one auxiliary variable sigma_x with
//
//   || sigma rows || <= sigma_x                (cone, family sigma_link)
//   E(x) + lambda * sigma_x <= x_max           (linear)
//   E(x) - lambda * sigma_x >= x_min           (linear)
//   sigma_x <= cap                             (linear, family sigma_cap, S3)
//
// which is equivalent to the two cones ||rows|| <= (x_max - E)/lambda and
// ||rows|| <= (E - x_min)/lambda. Quantities whose rows carry no variables
// become plain linear constraints.

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ccopf/conic_program.hpp"
#include "ccopf/errors.hpp"
#include "ccopf/forecast.hpp"
#include "ccopf/grid.hpp"
#include "ccopf/moments.hpp"
#include "ccopf/policy.hpp"

namespace ccopf {

enum class Scenario { S1, S2, S3 };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "S1";
    case Scenario::S2: return "S2";
    case Scenario::S3: return "S3";
  }
  return "S2";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "S1" || s == "s1") return Scenario::S1;
  if (s == "S2" || s == "s2") return Scenario::S2;
  if (s == "S3" || s == "s3") return Scenario::S3;
  throw ArgumentError("scenario must be S1, S2 or S3, got '" + s + "'");
}

/// lambda(eps) = Psi^{-1}(1 - eps) for the standard normal CDF Psi.
inline double quantile(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw ArgumentError("risk level must lie in (0, 0.5)");
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), epsilon));
}

enum class Quantity { line_flow, generation, ramp, storage_state, storage_terminal, storage_injection };

inline const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::line_flow: return "line_flow";
    case Quantity::generation: return "generation";
    case Quantity::ramp: return "ramp";
    case Quantity::storage_state: return "storage_state";
    case Quantity::storage_terminal: return "storage_terminal";
    case Quantity::storage_injection: return "storage_injection";
  }
  return "other";
}

inline ConstraintFamily family_of(Quantity q) {
  switch (q) {
    case Quantity::line_flow: return ConstraintFamily::line_flow;
    case Quantity::generation: return ConstraintFamily::generation;
    case Quantity::ramp: return ConstraintFamily::ramp;
    case Quantity::storage_state: return ConstraintFamily::storage_state;
    case Quantity::storage_terminal: return ConstraintFamily::storage_terminal;
    case Quantity::storage_injection: return ConstraintFamily::storage_injection;
  }
  return ConstraintFamily::other;
}

/// Risk levels: a default plus optional per-(quantity, element, t) overrides.
/// element is a bus id (1-based line number for flows); t is the 1-based time
/// of the quantity (state index t+1 for storage states, tau for ramps).
struct RiskConfig {
  double epsilon = 0.05;
  std::map<std::tuple<Quantity, int, int>, double> overrides;

  double epsilon_for(Quantity q, int element, int t) const {
    const auto it = overrides.find({q, element, t});
    return it == overrides.end() ? epsilon : it->second;
  }

  /// Throws when any level lies outside (0, 0.5); returns warnings for levels above 0.1.
  std::vector<std::string> validate() const {
    std::vector<std::string> warn;
    auto check = [&warn](double e) {
      if (!(e > 0.0 && e < 0.5)) throw ArgumentError("risk level " + std::to_string(e) + " outside (0, 0.5)");
      if (e > 0.1) warn.push_back("risk level " + std::to_string(e) + " above 0.1");
    };
    check(epsilon);
    for (const auto& [key, e] : overrides) check(e);
    return warn;
  }
};

struct ScenarioOptions {
  Scenario scenario = Scenario::S2;
  Balancing balancing = Balancing::local;
  double sigma_cap = 0.01;  // generator standard-deviation cap in S3
};

// ---------------------------------------------------------------------------
// Variable layout

/// Maps policy parameters to program variables. Responders are the
/// generators (bus order) followed by the storages (bus order); each has T
/// nominal variables followed by its packed lower-triangular gain blocks, one
/// per site (local) or a single shared block (global).
class VariableMap {
public:
  VariableMap() = default;
  VariableMap(int T, Balancing b, std::vector<int> sites, std::vector<int> gen_buses, std::vector<int> sto_buses)
      : horizon_(T), balancing_(b), sites_(std::move(sites)), gen_buses_(std::move(gen_buses)),
        sto_buses_(std::move(sto_buses)) {
    const int blocks = b == Balancing::global ? (sites_.empty() ? 0 : 1) : static_cast<int>(sites_.size());
    blocks_ = blocks;
    const int per = T + blocks * LowerTriangular::packed_size(T);
    per_responder_ = per;
    total_ = per * num_responders();
  }

  int horizon() const noexcept { return horizon_; }
  Balancing balancing() const noexcept { return balancing_; }
  const std::vector<int>& sites() const noexcept { return sites_; }
  const std::vector<int>& generator_buses() const noexcept { return gen_buses_; }
  const std::vector<int>& storage_buses() const noexcept { return sto_buses_; }
  int num_generators() const noexcept { return static_cast<int>(gen_buses_.size()); }
  int num_responders() const noexcept { return static_cast<int>(gen_buses_.size() + sto_buses_.size()); }
  bool is_storage(int r) const noexcept { return r >= num_generators(); }
  int responder_bus(int r) const { return is_storage(r) ? sto_buses_[r - num_generators()] : gen_buses_[r]; }
  int policy_variables() const noexcept { return total_; }

  /// Nominal value at 0-based time t.
  int nominal(int r, int t) const noexcept { return r * per_responder_ + t; }
  /// Gain entry (t, k), 0-based, of responder r against site position j.
  int gain(int r, int j, int t, int k) const noexcept {
    const int block = balancing_ == Balancing::global ? 0 : j;
    return r * per_responder_ + horizon_ + block * LowerTriangular::packed_size(horizon_) +
           LowerTriangular::index(t, k);
  }

  AffinePolicySet decode(std::span<const double> x) const {
    AffinePolicySet p = AffinePolicySet::zeros(horizon_, balancing_, sites_, gen_buses_, sto_buses_);
    for (int r = 0; r < num_responders(); ++r) {
      ResponderPolicy& rp = is_storage(r) ? p.storages[r - num_generators()] : p.generators[r];
      for (int t = 0; t < horizon_; ++t) rp.nominal[t] = x[nominal(r, t)];
      for (int b = 0; b < blocks_; ++b)
        for (int t = 0; t < horizon_; ++t)
          for (int k = 0; k <= t; ++k) rp.gains[b](t, k) = x[gain(r, b, t, k)];
    }
    return p;
  }

  std::vector<double> encode(const AffinePolicySet& p) const {
    if (p.horizon != horizon_ || p.balancing != balancing_ || p.sites != sites_)
      throw ArgumentError("policy structure does not match the variable map");
    std::vector<double> x(static_cast<std::size_t>(total_), 0.0);
    for (int r = 0; r < num_responders(); ++r) {
      const int bus = responder_bus(r);
      const ResponderPolicy* rp = is_storage(r) ? p.storage(bus) : p.generator(bus);
      if (!rp) throw ArgumentError("policy lacks responder at bus " + std::to_string(bus));
      for (int t = 0; t < horizon_; ++t) x[nominal(r, t)] = rp->nominal[t];
      for (int b = 0; b < blocks_; ++b)
        for (int t = 0; t < horizon_; ++t)
          for (int k = 0; k <= t; ++k) x[gain(r, b, t, k)] = rp->gains[b](t, k);
    }
    return x;
  }

  /// Declares the policy variables (with readable names) in an empty program.
  void declare(ConicProgram& prog) const {
    if (prog.num_variables() != 0) throw ArgumentError("policy variables must be declared first");
    for (int r = 0; r < num_responders(); ++r) {
      const std::string who = (is_storage(r) ? "s" : "u") + std::to_string(responder_bus(r));
      for (int t = 0; t < horizon_; ++t) prog.add_variable(who + "_hat[" + std::to_string(t + 1) + "]");
      for (int b = 0; b < blocks_; ++b) {
        const std::string site = balancing_ == Balancing::global ? "all" : std::to_string(sites_[b]);
        for (int t = 0; t < horizon_; ++t)
          for (int k = 0; k <= t; ++k)
            prog.add_variable((is_storage(r) ? "S" : "U") + std::to_string(responder_bus(r)) + "," + site + "[" +
                              std::to_string(t + 1) + "," + std::to_string(k + 1) + "]");
      }
    }
  }

private:
  int horizon_ = 0;
  Balancing balancing_ = Balancing::local;
  std::vector<int> sites_, gen_buses_, sto_buses_;
  int blocks_ = 0;
  int per_responder_ = 0;
  int total_ = 0;
};

/// One chance-constrained quantity of the program. Bounds are +-inf when absent.
struct ChanceConstraintRecord {
  Quantity quantity = Quantity::generation;
  int element = 0;  // bus id, or 1-based line number
  int t = 0;        // 1-based time; storage state slot t+1 is recorded as t
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  double epsilon = 0.05;
  double lambda = 0.0;
  std::optional<double> sigma_cap;
};

struct BuildResult {
  ConicProgram program;
  VariableMap map;
  std::vector<ChanceConstraintRecord> chance;
  std::vector<std::string> warnings;
  int policy_variables = 0;
  int auxiliary_variables = 0;
};

namespace detail {

/// Context shared by the sub-builders.
struct BuildContext {
  const GridModel& grid;
  const std::vector<DisturbanceModel>& dist;
  const VariableMap& map;
  ConicProgram& prog;
  std::vector<std::string>& warnings;
  std::vector<const DisturbanceModel*> site_model;  // per site position
  std::vector<int> site_bus_index;
};

/// Drops rows without variables and zero constant. Under global balancing
/// identical rows collapse into one scaled by sqrt(multiplicity).
inline std::vector<AffineExpr> tidy_rows(std::vector<AffineExpr> rows, bool merge) {
  std::vector<AffineExpr> out;
  out.reserve(rows.size());
  for (auto& r : rows) {
    r.canonicalize();
    if (r.terms.empty() && r.constant == 0.0) continue;
    out.push_back(std::move(r));
  }
  if (!merge || out.size() < 2) return out;
  std::vector<AffineExpr> merged;
  std::vector<int> count;
  std::map<std::vector<double>, int> seen;
  for (auto& r : out) {
    std::vector<double> key;
    key.reserve(2 * r.terms.size() + 1);
    for (const auto& t : r.terms) {
      key.push_back(t.var);
      key.push_back(t.coef);
    }
    key.push_back(r.constant);
    const auto [it, fresh] = seen.try_emplace(std::move(key), static_cast<int>(merged.size()));
    if (fresh) {
      merged.push_back(std::move(r));
      count.push_back(1);
    } else {
      ++count[it->second];
    }
  }
  for (std::size_t i = 0; i < merged.size(); ++i)
    if (count[i] > 1) {
      const double s = std::sqrt(static_cast<double>(count[i]));
      for (auto& t : merged[i].terms) t.coef *= s;
      merged[i].constant *= s;
    }
  return merged;
}

}  // namespace detail

/// Chance constraints lower <= E(x) -+ lambda sigma(x) <= upper and the
/// optional cap sigma(x) <= cap. Returns the auxiliary variable index or -1.
inline int add_chance_constraint(ConicProgram& prog, const AffineExpr& mean, std::vector<AffineExpr> rows,
                                 double lower, double upper, double lambda, ConstraintFamily family,
                                 std::optional<double> cap, const std::string& name, bool merge_rows,
                                 std::vector<std::string>* warnings = nullptr) {
  if (lower > upper) throw ModelError(name + ": lower limit exceeds upper limit");
  rows = detail::tidy_rows(std::move(rows), merge_rows);
  bool symbolic = false;
  double const_sq = 0.0;
  for (const auto& r : rows) {
    symbolic = symbolic || r.has_variables();
    const_sq += r.constant * r.constant;
  }
  const bool has_upper = std::isfinite(upper), has_lower = std::isfinite(lower);
  if (!symbolic) {
    const double sigma = std::sqrt(const_sq);
    if (has_upper) prog.add_inequality(AffineExpr(upper - lambda * sigma).add(mean, -1.0), family);
    if (has_lower) prog.add_inequality(AffineExpr(-lower - lambda * sigma).add(mean, 1.0), family);
    if (cap && sigma > *cap && warnings)
      warnings->push_back(name + ": fixed standard deviation " + std::to_string(sigma) + " exceeds its cap");
    if (cap && sigma > *cap) prog.add_inequality(AffineExpr(*cap - sigma), ConstraintFamily::sigma_cap);
    return -1;
  }
  if (!has_upper && !has_lower && !cap) return -1;
  const int s = prog.add_variable("sigma:" + name);
  prog.add_cone(AffineExpr().add(s, 1.0), std::move(rows), ConstraintFamily::sigma_link);
  if (has_upper) prog.add_inequality(AffineExpr(upper).add(mean, -1.0).add(s, -lambda), family);
  if (has_lower) prog.add_inequality(AffineExpr(-lower).add(mean, 1.0).add(s, -lambda), family);
  if (cap) prog.add_inequality(AffineExpr(*cap).add(s, -1.0), ConstraintFamily::sigma_cap);
  return s;
}

/// Mean balance for every t and per-site gain balance for every (t, k <= t).
/// Under global balancing duplicate equalities (sites with identical factors)
/// are emitted once.
inline void build_balance_constraints(ConicProgram& prog, const VariableMap& map,
                                      const std::vector<DisturbanceModel>& dist, std::vector<std::string>& warnings) {
  const int T = map.horizon();
  for (int t = 0; t < T; ++t) {
    AffineExpr e;
    for (const auto& d : dist) e.constant += d.mean[t];
    for (int r = 0; r < map.num_responders(); ++r) e.add(map.nominal(r, t), 1.0);
    prog.add_equality(std::move(e), ConstraintFamily::balance_mean);
  }
  const auto& sites = map.sites();
  if (!sites.empty() && map.num_responders() == 0)
    warnings.push_back("uncertain disturbances present but no generator or storage can respond");
  std::vector<const DisturbanceModel*> models;
  for (int bus : sites) {
    const DisturbanceModel* m = nullptr;
    for (const auto& d : dist)
      if (d.node == bus) m = &d;
    if (!m) throw ArgumentError("no disturbance model for site bus " + std::to_string(bus));
    models.push_back(m);
  }
  bool conflicting = false;
  for (std::size_t j = 0; j < sites.size(); ++j) {
    if (map.balancing() == Balancing::global && j > 0) {
      bool same = false;
      for (std::size_t q = 0; q < j && !same; ++q) same = models[q]->factor == models[j]->factor;
      if (same) continue;
      conflicting = true;
    }
    for (int t = 0; t < T; ++t)
      for (int k = 0; k <= t; ++k) {
        AffineExpr e(models[j]->factor(t, k));
        for (int r = 0; r < map.num_responders(); ++r) e.add(map.gain(r, static_cast<int>(j), t, k), 1.0);
        prog.add_equality(std::move(e), ConstraintFamily::balance_gain);
      }
  }
  if (conflicting)
    warnings.push_back("global balancing with differing disturbance factors: the shared gains cannot balance every "
                       "site, the program is infeasible");
}

/// Expected generation cost: sum_t sum_i gamma2 (u_hat^2 + V(u)) + gamma1 u_hat + gamma0.
inline void build_objective(ConicProgram& prog, const VariableMap& map, const GridModel& grid) {
  auto& obj = prog.objective();
  const int T = map.horizon();
  const double copies = map.balancing() == Balancing::global ? static_cast<double>(map.sites().size()) : 1.0;
  const int blocks = map.balancing() == Balancing::global ? (map.sites().empty() ? 0 : 1)
                                                          : static_cast<int>(map.sites().size());
  for (int r = 0; r < map.num_generators(); ++r) {
    const GeneratorSpec* g = grid.generator_at(map.responder_bus(r));
    if (!g) throw ArgumentError("no generator at bus " + std::to_string(map.responder_bus(r)));
    if (!(g->cost.quadratic > 0))
      throw ModelError("generator at bus " + std::to_string(g->bus) + ": quadratic cost must be positive");
    for (int t = 0; t < T; ++t) {
      const int v = map.nominal(r, t);
      obj.quadratic.push_back({v, v, g->cost.quadratic});
      obj.linear.add(v, g->cost.linear);
      obj.linear.constant += g->cost.constant;
      for (int b = 0; b < blocks; ++b)
        for (int k = 0; k <= t; ++k) {
          const int w = map.gain(r, b, t, k);
          obj.quadratic.push_back({w, w, g->cost.quadratic * copies});
        }
    }
  }
}

/// Chance constraints for generation, ramps, storage injection/state/terminal
/// state and line flows.
inline void build_chance_constraints(ConicProgram& prog, const VariableMap& map, const GridModel& grid,
                                     const std::vector<DisturbanceModel>& dist, const RiskConfig& risk,
                                     const ScenarioOptions& opt, std::vector<ChanceConstraintRecord>& records,
                                     std::vector<std::string>& warnings) {
  const int T = map.horizon();
  const auto& sites = map.sites();
  const int ns = static_cast<int>(sites.size());
  const bool merge = map.balancing() == Balancing::global;

  auto emit = [&](Quantity q, int element, int t, const AffineExpr& mean, std::vector<AffineExpr> rows, double lo,
                  double hi, std::optional<double> cap) {
    const double eps = risk.epsilon_for(q, element, t);
    const double lambda = quantile(eps);
    const std::string name = std::string(to_string(q)) + ":" + std::to_string(element) + ":" + std::to_string(t);
    const int s = add_chance_constraint(prog, mean, std::move(rows), lo, hi, lambda, family_of(q), cap, name, merge,
                                        &warnings);
    records.push_back({q, element, t, lo, hi, eps, lambda, cap});
    return s;
  };

  // generators
  for (int r = 0; r < map.num_generators(); ++r) {
    const GeneratorSpec& g = *grid.generator_at(map.responder_bus(r));
    std::optional<double> cap = g.sigma_cap;
    if (opt.scenario == Scenario::S3) cap = cap ? std::min(*cap, opt.sigma_cap) : opt.sigma_cap;
    for (int t = 0; t < T; ++t) {
      std::vector<AffineExpr> rows;
      for (int j = 0; j < ns; ++j)
        for (int k = 0; k <= t; ++k) rows.push_back(AffineExpr().add(map.gain(r, j, t, k), 1.0));
      emit(Quantity::generation, g.bus, t + 1, AffineExpr().add(map.nominal(r, t), 1.0), std::move(rows), g.u_min,
           g.u_max, cap);
    }
    for (int t = 1; t < T; ++t) {
      std::vector<AffineExpr> rows;
      for (int j = 0; j < ns; ++j) {
        rows.push_back(AffineExpr().add(map.gain(r, j, t, t), 1.0));
        for (int k = 0; k < t; ++k)
          rows.push_back(AffineExpr().add(map.gain(r, j, t, k), 1.0).add(map.gain(r, j, t - 1, k), -1.0));
      }
      emit(Quantity::ramp, g.bus, t + 1, AffineExpr().add(map.nominal(r, t), 1.0).add(map.nominal(r, t - 1), -1.0),
           std::move(rows), g.ramp_min, g.ramp_max, std::nullopt);
    }
  }

  // storages
  for (int r = map.num_generators(); r < map.num_responders(); ++r) {
    const StorageSpec& s = *grid.storage_at(map.responder_bus(r));
    for (int t = 0; t < T; ++t) {
      std::vector<AffineExpr> rows;
      for (int j = 0; j < ns; ++j)
        for (int k = 0; k <= t; ++k) rows.push_back(AffineExpr().add(map.gain(r, j, t, k), 1.0));
      emit(Quantity::storage_injection, s.bus, t + 1, AffineExpr().add(map.nominal(r, t), 1.0), std::move(rows),
           s.s_min, s.s_max, std::nullopt);
    }
    for (int t = 0; t < T; ++t) {
      // state e(t+2) in 1-based slots, i.e. after injections 1..t+1
      AffineExpr mean(s.e_initial_mean);
      for (int k = 0; k <= t; ++k) mean.add(map.nominal(r, k), -s.h);
      std::vector<AffineExpr> rows;
      for (int j = 0; j < ns; ++j)
        for (int k = 0; k <= t; ++k) {
          AffineExpr e;
          for (int l = k; l <= t; ++l) e.add(map.gain(r, j, l, k), s.h);
          rows.push_back(std::move(e));
        }
      if (s.e_initial_var > 0) rows.push_back(AffineExpr(std::sqrt(s.e_initial_var)));
      const std::string name = "storage_state:" + std::to_string(s.bus) + ":" + std::to_string(t + 1);
      const double eps = risk.epsilon_for(Quantity::storage_state, s.bus, t + 1);
      const int aux = add_chance_constraint(prog, mean, rows, s.e_min, s.e_max, quantile(eps),
                                            ConstraintFamily::storage_state, std::nullopt, name, merge, &warnings);
      records.push_back({Quantity::storage_state, s.bus, t + 1, s.e_min, s.e_max, eps, quantile(eps), std::nullopt});
      if (t == T - 1) {
        // terminal band on the final state, sharing its standard deviation
        const double eps_t = risk.epsilon_for(Quantity::storage_terminal, s.bus, T);
        const double lam = quantile(eps_t);
        if (aux >= 0) {
          prog.add_inequality(AffineExpr(s.e_terminal_max).add(mean, -1.0).add(aux, -lam),
                              ConstraintFamily::storage_terminal);
          prog.add_inequality(AffineExpr(-s.e_terminal_min).add(mean, 1.0).add(aux, -lam),
                              ConstraintFamily::storage_terminal);
        } else {
          add_chance_constraint(prog, mean, rows, s.e_terminal_min, s.e_terminal_max, lam,
                                ConstraintFamily::storage_terminal, std::nullopt, name + ":terminal", merge,
                                &warnings);
        }
        records.push_back(
            {Quantity::storage_terminal, s.bus, T, s.e_terminal_min, s.e_terminal_max, eps_t, lam, std::nullopt});
      }
    }
  }

  // line flows
  std::vector<int> resp_bus(map.num_responders());
  for (int r = 0; r < map.num_responders(); ++r) resp_bus[r] = grid.bus_index(map.responder_bus(r));
  std::vector<const DisturbanceModel*> site_model(ns, nullptr);
  std::vector<int> site_bus(ns);
  for (int j = 0; j < ns; ++j) {
    for (const auto& d : dist)
      if (d.node == sites[j]) site_model[j] = &d;
    site_bus[j] = grid.bus_index(sites[j]);
  }
  for (int l = 0; l < grid.num_lines(); ++l) {
    const Line& line = grid.lines[l];
    if (!line.limited()) continue;
    const auto phi = grid.ptdf.row(l);
    for (int t = 0; t < T; ++t) {
      AffineExpr mean;
      for (const auto& d : dist) mean.constant += phi[grid.bus_index(d.node)] * d.mean[t];
      for (int r = 0; r < map.num_responders(); ++r)
        if (phi[resp_bus[r]] != 0.0) mean.add(map.nominal(r, t), phi[resp_bus[r]]);
      std::vector<AffineExpr> rows;
      for (int j = 0; j < ns; ++j)
        for (int k = 0; k <= t; ++k) {
          AffineExpr e(phi[site_bus[j]] * site_model[j]->factor(t, k));
          for (int r = 0; r < map.num_responders(); ++r)
            if (phi[resp_bus[r]] != 0.0) e.add(map.gain(r, j, t, k), phi[resp_bus[r]]);
          rows.push_back(std::move(e));
        }
      emit(Quantity::line_flow, l + 1, t + 1, mean, std::move(rows), -line.flow_limit, line.flow_limit,
           std::nullopt);
    }
  }
}

/// Full program for a scenario. Disturbance models must cover every
/// disturbance of the grid; the uncertain sites are those flagged stochastic
/// in the grid.
inline BuildResult assemble(const GridModel& grid, const std::vector<DisturbanceModel>& dist,
                            const ScenarioOptions& opt, const RiskConfig& risk, int T) {
  BuildResult out;
  out.warnings = risk.validate();
  if (T < 1) throw ArgumentError("horizon must be at least 1");
  for (const auto& d : dist) {
    d.validate();
    if (d.horizon() != T)
      throw ArgumentError("disturbance at bus " + std::to_string(d.node) + " has horizon " +
                          std::to_string(d.horizon()) + ", expected " + std::to_string(T));
    if (!grid.has_bus(d.node)) throw ArgumentError("disturbance at unknown bus " + std::to_string(d.node));
    const auto& bus = grid.buses[grid.bus_index(d.node)];
    if (d.stochastic() && !bus.has_disturbance)
      throw ArgumentError("bus " + std::to_string(d.node) + " has a random forecast but is not an uncertain site");
  }
  const std::vector<int> sites = grid.disturbance_sites();
  for (int s : sites) {
    bool found = false;
    for (const auto& d : dist) found = found || d.node == s;
    if (!found) throw ArgumentError("no forecast for uncertain site at bus " + std::to_string(s));
  }
  std::vector<int> gens, stos;
  for (const auto& g : grid.generators) gens.push_back(g.bus);
  if (opt.scenario != Scenario::S1)
    for (const auto& s : grid.storages) stos.push_back(s.bus);

  out.map = VariableMap(T, opt.balancing, sites, gens, stos);
  out.map.declare(out.program);
  out.policy_variables = out.map.policy_variables();
  build_balance_constraints(out.program, out.map, dist, out.warnings);
  build_objective(out.program, out.map, grid);
  build_chance_constraints(out.program, out.map, grid, dist, risk, opt, out.chance, out.warnings);
  out.auxiliary_variables = out.program.num_variables() - out.policy_variables;
  return out;
}

}  // namespace ccopf
