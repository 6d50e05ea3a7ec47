#pragma once

// DC network model: MATPOWER-style case parsing, site overlays (which buses
// carry storage and uncertain disturbances), parameter rules for the case
// studies, and the power transfer distribution factor matrix.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ccopf/errors.hpp"

namespace ccopf {

// ---------------------------------------------------------------------------
// Raw case tables

/// Numeric tables of a MATPOWER case, in file units (MW, MVA base).
struct MatpowerCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<std::vector<double>> bus;
  std::vector<std::vector<double>> gen;
  std::vector<std::vector<double>> branch;
  std::vector<std::vector<double>> gencost;

  bool operator==(const MatpowerCase&) const = default;
};

namespace matpower {
// column indices (0-based) of the tables we read
inline constexpr int BUS_I = 0, BUS_TYPE = 1, PD = 2;
inline constexpr int GEN_BUS = 0, GEN_STATUS = 7, PMAX = 8, PMIN = 9, RAMP_30 = 18;
inline constexpr int F_BUS = 0, T_BUS = 1, BR_X = 3, RATE_A = 5, BR_STATUS = 10;
inline constexpr int COST_MODEL = 0, COST_NCOST = 3;
inline constexpr int BUS_ISOLATED = 4, BUS_SLACK = 3;
}  // namespace matpower

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(const std::string& line) {
  bool in_quote = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\'') in_quote = !in_quote;
    if (line[i] == '%' && !in_quote) return line.substr(0, i);
  }
  return line;
}

inline double parse_number(const std::string& tok, int line) {
  if (tok == "Inf" || tok == "inf") return std::numeric_limits<double>::infinity();
  if (tok == "-Inf" || tok == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + tok + "'", line);
  }
  if (used != tok.size()) throw ParseError("expected a number, got '" + tok + "'", line);
  return v;
}

}  // namespace detail

/// Parses the numeric tables of a MATPOWER case file. Unknown fields (names,
/// version strings, cell arrays) are skipped.
inline MatpowerCase parse_matpower(std::string_view text) {
  MatpowerCase mc;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  std::vector<std::vector<double>>* table = nullptr;
  std::string table_name;
  int table_start = 0;
  bool in_cell = false;
  bool saw_base = false;
  std::set<std::string> seen;
  std::vector<std::vector<double>> discard;

  auto push_row = [&](const std::string& row_text, int line) {
    std::istringstream rs(row_text);
    std::vector<double> row;
    std::string tok;
    while (rs >> tok) row.push_back(detail::parse_number(tok, line));
    if (row.empty()) return;
    if (!table->empty() && table->front().size() != row.size())
      throw ParseError("row of mpc." + table_name + " has " + std::to_string(row.size()) + " columns, expected " +
                           std::to_string(table->front().size()),
                       line);
    table->push_back(std::move(row));
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (in_cell) {
      if (line.find('}') != std::string::npos) in_cell = false;
      continue;
    }
    if (table) {
      const auto close = line.find(']');
      std::string body = close == std::string::npos ? line : line.substr(0, close);
      std::replace(body.begin(), body.end(), ',', ' ');
      std::size_t pos = 0;
      while (pos <= body.size()) {
        const auto semi = body.find(';', pos);
        push_row(body.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos), line_no);
        if (semi == std::string::npos) break;
        pos = semi + 1;
      }
      if (close != std::string::npos) table = nullptr;
      continue;
    }
    if (line.rfind("function", 0) == 0) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) mc.name = detail::trim(line.substr(eq + 1));
      continue;
    }
    if (line.rfind("mpc.", 0) != 0) {
      if (line == "return" || line == "end") continue;
      throw ParseError("unexpected statement '" + line + "'", line_no);
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("missing '=' in assignment", line_no);
    const std::string field = detail::trim(line.substr(4, eq - 4));
    std::string rhs = detail::trim(line.substr(eq + 1));
    if (field == "baseMVA") {
      if (!rhs.empty() && rhs.back() == ';') rhs.pop_back();
      mc.base_mva = detail::parse_number(detail::trim(rhs), line_no);
      if (!(mc.base_mva > 0)) throw ParseError("baseMVA must be positive", line_no);
      saw_base = true;
      continue;
    }
    if (!rhs.empty() && rhs.front() == '{') {
      in_cell = rhs.find('}') == std::string::npos;
      continue;
    }
    if (!rhs.empty() && rhs.front() == '[') {
      std::vector<std::vector<double>>* target = nullptr;
      if (field == "bus") target = &mc.bus;
      else if (field == "gen") target = &mc.gen;
      else if (field == "branch") target = &mc.branch;
      else if (field == "gencost") target = &mc.gencost;
      discard.clear();
      table = target ? target : &discard;
      table_name = field;
      table_start = line_no;
      if (target) seen.insert(field);
      std::string rest = rhs.substr(1);
      const auto close = rest.find(']');
      std::string body = close == std::string::npos ? rest : rest.substr(0, close);
      std::replace(body.begin(), body.end(), ',', ' ');
      std::size_t pos = 0;
      while (pos <= body.size()) {
        const auto semi = body.find(';', pos);
        push_row(body.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos), line_no);
        if (semi == std::string::npos) break;
        pos = semi + 1;
      }
      if (close != std::string::npos) table = nullptr;
      continue;
    }
    // scalar or string fields such as mpc.version
  }
  if (table) throw ParseError("unterminated matrix mpc." + table_name, table_start);
  if (!saw_base) throw ParseError("missing mpc.baseMVA");
  for (const char* req : {"bus", "gen", "branch"})
    if (!seen.count(req)) throw ParseError(std::string("missing mpc.") + req);
  auto check_cols = [](const std::vector<std::vector<double>>& t, std::size_t min_cols, const char* name) {
    if (!t.empty() && t.front().size() < min_cols)
      throw ParseError(std::string("mpc.") + name + " needs at least " + std::to_string(min_cols) + " columns");
  };
  check_cols(mc.bus, 3, "bus");
  check_cols(mc.gen, 10, "gen");
  check_cols(mc.branch, 11, "branch");
  check_cols(mc.gencost, 4, "gencost");
  return mc;
}

/// Serializes the tables back into MATPOWER syntax.
inline std::string write_matpower(const MatpowerCase& mc) {
  std::ostringstream out;
  out.precision(17);
  out << "function mpc = " << (mc.name.empty() ? "case" : mc.name) << "\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << mc.base_mva << ";\n";
  auto table = [&out](const char* name, const std::vector<std::vector<double>>& rows) {
    out << "mpc." << name << " = [\n";
    for (const auto& r : rows) {
      out << '\t';
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "\t" : "") << r[i];
      out << ";\n";
    }
    out << "];\n";
  };
  table("bus", mc.bus);
  table("gen", mc.gen);
  table("branch", mc.branch);
  if (!mc.gencost.empty()) table("gencost", mc.gencost);
  return out.str();
}

// ---------------------------------------------------------------------------
// Network model

struct CostCoefficients {
  double quadratic = 0.0;  // gamma_2
  double linear = 0.0;     // gamma_1
  double constant = 0.0;   // gamma_0
  bool operator==(const CostCoefficients&) const = default;
};

struct Bus {
  int id = 0;
  double nominal_load = 0.0;  // per-unit, consumption positive
  bool has_generator = false;
  bool has_storage = false;
  bool has_disturbance = false;  // uncertain disturbance site
  bool operator==(const Bus&) const = default;
};

struct Line {
  int from_bus = 0;
  int to_bus = 0;
  double reactance = 0.0;
  double rating = 0.0;  // per-unit thermal rating from the case, 0 = unrated
  double flow_limit = std::numeric_limits<double>::infinity();
  bool limited() const noexcept { return std::isfinite(flow_limit); }
  bool operator==(const Line&) const = default;
};

struct GeneratorSpec {
  int bus = 0;
  double p_max = 0.0;  // merged case capacity, per-unit
  double u_min = 0.0;
  double u_max = 0.0;
  double ramp_min = 0.0;
  double ramp_max = 0.0;
  CostCoefficients cost;
  std::optional<double> sigma_cap;
  bool operator==(const GeneratorSpec&) const = default;
};

struct StorageSpec {
  int bus = 0;
  double e_min = 0.0;
  double e_max = 6.0;
  double s_min = -10.0;
  double s_max = 10.0;
  double e_initial_mean = 2.0;
  double e_initial_var = 0.0;
  double e_terminal_min = 0.19;
  double e_terminal_max = 0.21;
  double h = 1.0;
  bool operator==(const StorageSpec&) const = default;
};

/// A bus whose disturbance enters the forecast: certain loads and uncertain
/// feed-ins alike. `nominal` follows the case-file convention (consumption
/// positive); `factor_scale` multiplies the exemplar factor for stochastic sites.
struct DisturbanceSpec {
  int bus = 0;
  double nominal = 0.0;
  bool stochastic = false;
  double factor_scale = 1.0;
  bool operator==(const DisturbanceSpec&) const = default;
};

/// Default parameter rules applied in paper mode.
struct ParameterRules {
  double u_min = 0.0;
  double u_max_factor = 1.1;
  double ramp_factor = 0.15;
  CostCoefficients cost{0.01, 0.3, 0.2};
  double line_factor = 0.85;
  StorageSpec storage{};
};

/// Site assignment and parameter overrides applied on top of a case file.
struct SiteOverlay {
  std::optional<int> reference_bus;
  bool paper_limits = true;
  std::vector<int> remove_generators;   // buses whose generators are dropped
  std::vector<StorageSpec> storages;    // bus plus per-storage parameters
  std::vector<DisturbanceSpec> disturbances;
  bool include_case_loads = true;       // every loaded bus becomes a certain disturbance
  ParameterRules rules;
};

class GridModel;
Eigen::MatrixXd compute_ptdf(const GridModel& model);

class GridModel {
public:
  double base_mva = 100.0;
  int reference_bus = 0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<GeneratorSpec> generators;    // in bus order
  std::vector<StorageSpec> storages;        // in bus order
  std::vector<DisturbanceSpec> disturbances;  // in bus order
  Eigen::MatrixXd ptdf;                     // lines x buses

  int num_buses() const noexcept { return static_cast<int>(buses.size()); }
  int num_lines() const noexcept { return static_cast<int>(lines.size()); }

  /// Buses of the uncertain disturbance sites (the set D).
  std::vector<int> disturbance_sites() const {
    std::vector<int> out;
    for (const auto& d : disturbances)
      if (d.stochastic) out.push_back(d.bus);
    return out;
  }

  int bus_index(int id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ArgumentError("unknown bus " + std::to_string(id));
    return it->second;
  }
  bool has_bus(int id) const { return index_.count(id) > 0; }

  const GeneratorSpec* generator_at(int bus) const {
    for (const auto& g : generators)
      if (g.bus == bus) return &g;
    return nullptr;
  }
  const StorageSpec* storage_at(int bus) const {
    for (const auto& s : storages)
      if (s.bus == bus) return &s;
    return nullptr;
  }

  /// Recomputes bus flags and indices, checks invariants and refreshes the PTDF.
  void finalize() {
    index_.clear();
    for (int i = 0; i < num_buses(); ++i) {
      if (!index_.emplace(buses[i].id, i).second) throw ModelError("duplicate bus id " + std::to_string(buses[i].id));
    }
    auto by_bus = [](const auto& a, const auto& b) { return a.bus < b.bus; };
    std::sort(generators.begin(), generators.end(), by_bus);
    std::sort(storages.begin(), storages.end(), by_bus);
    std::sort(disturbances.begin(), disturbances.end(), by_bus);
    for (auto& b : buses) b.has_generator = b.has_storage = b.has_disturbance = false;
    for (const auto& g : generators) {
      Bus& b = buses[bus_index_checked(g.bus, "generator")];
      if (b.has_generator) throw ModelError("more than one generator at bus " + std::to_string(g.bus));
      b.has_generator = true;
      if (!(g.u_min <= g.u_max)) throw ModelError("generator at bus " + std::to_string(g.bus) + ": u_min > u_max");
      if (!(g.ramp_min <= 0.0 && 0.0 <= g.ramp_max))
        throw ModelError("generator at bus " + std::to_string(g.bus) + ": ramp limits must bracket zero");
    }
    for (const auto& s : storages) {
      Bus& b = buses[bus_index_checked(s.bus, "storage")];
      if (b.has_storage) throw ModelError("more than one storage at bus " + std::to_string(s.bus));
      if (b.has_generator) throw ModelError("bus " + std::to_string(s.bus) + " has both a generator and a storage");
      b.has_storage = true;
      if (!(s.e_min <= s.e_terminal_min && s.e_terminal_min <= s.e_terminal_max && s.e_terminal_max <= s.e_max))
        throw ModelError("storage at bus " + std::to_string(s.bus) + ": need e_min <= terminal band <= e_max");
      if (!(s.h > 0)) throw ModelError("storage at bus " + std::to_string(s.bus) + ": h must be positive");
      if (!(s.s_min <= s.s_max)) throw ModelError("storage at bus " + std::to_string(s.bus) + ": s_min > s_max");
      if (s.e_initial_var < 0) throw ModelError("storage at bus " + std::to_string(s.bus) + ": negative variance");
    }
    std::set<int> seen;
    for (const auto& d : disturbances) {
      Bus& b = buses[bus_index_checked(d.bus, "disturbance")];
      if (!seen.insert(d.bus).second) throw ModelError("duplicate disturbance at bus " + std::to_string(d.bus));
      b.nominal_load = d.nominal;
      b.has_disturbance = d.stochastic;
    }
    for (const auto& l : lines) {
      bus_index_checked(l.from_bus, "line");
      bus_index_checked(l.to_bus, "line");
      if (l.from_bus == l.to_bus) throw ModelError("line from bus " + std::to_string(l.from_bus) + " to itself");
      if (!(l.reactance > 0))
        throw ModelError("line " + std::to_string(l.from_bus) + "-" + std::to_string(l.to_bus) +
                         " has non-positive reactance");
    }
    bus_index_checked(reference_bus, "reference");
    check_connected();
    ptdf = compute_ptdf(*this);
  }

  /// Copy with another reference bus (and hence another PTDF).
  GridModel with_reference(int bus) const {
    GridModel g = *this;
    g.reference_bus = bus;
    g.finalize();
    return g;
  }

private:
  int bus_index_checked(int id, const char* what) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ModelError(std::string(what) + " refers to unknown bus " + std::to_string(id));
    return it->second;
  }

  void check_connected() const {
    const int n = num_buses();
    if (n < 2 || lines.empty()) throw ModelError("network needs at least two buses and one line");
    std::vector<std::vector<int>> adj(n);
    for (const auto& l : lines) {
      const int a = index_.at(l.from_bus), b = index_.at(l.to_bus);
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int w : adj[v])
        if (!seen[w]) {
          seen[w] = 1;
          ++count;
          q.push(w);
        }
    }
    if (count != n) throw ModelError("network is disconnected");
  }

  std::map<int, int> index_;
};

/// PTDF with the reference-bus column identically zero. Line flow is positive
/// in the from -> to direction.
inline Eigen::MatrixXd compute_ptdf(const GridModel& model) {
  const int n = model.num_buses(), nl = model.num_lines();
  const int ref = model.bus_index(model.reference_bus);
  Eigen::MatrixXd b_bus = Eigen::MatrixXd::Zero(n, n);
  for (const auto& l : model.lines) {
    const int f = model.bus_index(l.from_bus), t = model.bus_index(l.to_bus);
    const double b = 1.0 / l.reactance;
    b_bus(f, f) += b;
    b_bus(t, t) += b;
    b_bus(f, t) -= b;
    b_bus(t, f) -= b;
  }
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (i != ref) keep.push_back(i);
  const int m = n - 1;
  Eigen::MatrixXd reduced(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) reduced(a, b) = b_bus(keep[a], keep[b]);
  Eigen::LLT<Eigen::MatrixXd> llt(reduced);
  if (llt.info() != Eigen::Success) throw NumericalError("reduced susceptance matrix is singular");
  const Eigen::MatrixXd x_red = llt.solve(Eigen::MatrixXd::Identity(m, m));  // angle sensitivities
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) x(keep[a], keep[b]) = x_red(a, b);
  Eigen::MatrixXd ptdf(nl, n);
  for (int j = 0; j < nl; ++j) {
    const auto& l = model.lines[j];
    const int f = model.bus_index(l.from_bus), t = model.bus_index(l.to_bus);
    ptdf.row(j) = (x.row(f) - x.row(t)) / l.reactance;
  }
  return ptdf;
}

/// Builds a GridModel from raw tables and a site overlay. Generators sharing
/// a bus are merged (capacities summed); storage buses drop their generator.
inline GridModel build_grid(const MatpowerCase& mc, const SiteOverlay& overlay = {}) {
  using namespace matpower;
  GridModel g;
  g.base_mva = mc.base_mva;
  const double base = mc.base_mva;
  std::map<int, double> case_load;
  std::optional<int> slack;
  std::set<int> live;
  for (const auto& r : mc.bus) {
    const int id = static_cast<int>(r[BUS_I]);
    if (static_cast<int>(r[BUS_TYPE]) == BUS_ISOLATED) continue;
    live.insert(id);
    g.buses.push_back({id, r[PD] / base, false, false, false});
    if (r[PD] != 0.0) case_load[id] = r[PD] / base;
    if (static_cast<int>(r[BUS_TYPE]) == BUS_SLACK && !slack) slack = id;
  }
  for (const auto& r : mc.branch) {
    if (r[BR_STATUS] == 0.0) continue;
    const int f = static_cast<int>(r[F_BUS]), t = static_cast<int>(r[T_BUS]);
    if (!live.count(f) || !live.count(t)) continue;
    Line l;
    l.from_bus = f;
    l.to_bus = t;
    l.reactance = r[BR_X];
    l.rating = r[RATE_A] / base;
    if (r[RATE_A] > 0) l.flow_limit = (overlay.paper_limits ? overlay.rules.line_factor : 1.0) * l.rating;
    g.lines.push_back(l);
  }

  std::set<int> removed(overlay.remove_generators.begin(), overlay.remove_generators.end());
  for (const auto& s : overlay.storages) removed.insert(s.bus);
  std::map<int, GeneratorSpec> merged;
  for (std::size_t k = 0; k < mc.gen.size(); ++k) {
    const auto& r = mc.gen[k];
    const int bus = static_cast<int>(r[GEN_BUS]);
    if (r[GEN_STATUS] <= 0.0 || !live.count(bus) || removed.count(bus)) continue;
    CostCoefficients cost;
    if (k < mc.gencost.size() && static_cast<int>(mc.gencost[k][COST_MODEL]) == 2) {
      const auto& c = mc.gencost[k];
      const int nc = static_cast<int>(c[COST_NCOST]);
      std::vector<double> coef(c.begin() + 4, c.begin() + 4 + std::min<std::size_t>(nc, c.size() - 4));
      const int deg = static_cast<int>(coef.size()) - 1;
      for (int p = 0; p <= deg; ++p) {
        const double v = coef[deg - p] * std::pow(base, p);
        if (p == 0) cost.constant = v;
        if (p == 1) cost.linear = v;
        if (p == 2) cost.quadratic = v;
      }
    }
    auto [it, fresh] = merged.try_emplace(bus);
    GeneratorSpec& gs = it->second;
    if (fresh) {
      gs.bus = bus;
      gs.cost = cost;
      gs.u_min = r[PMIN] / base;
      gs.u_max = r[PMAX] / base;
      gs.ramp_max = r.size() > RAMP_30 && r[RAMP_30] > 0 ? r[RAMP_30] / base : 0.0;
    } else {
      gs.u_min += r[PMIN] / base;
      gs.u_max += r[PMAX] / base;
      if (r.size() > RAMP_30 && r[RAMP_30] > 0) gs.ramp_max += r[RAMP_30] / base;
    }
    gs.p_max += r[PMAX] / base;
  }
  for (auto& [bus, gs] : merged) {
    if (overlay.paper_limits) {
      gs.u_min = overlay.rules.u_min;
      gs.u_max = overlay.rules.u_max_factor * gs.p_max;
      gs.ramp_max = overlay.rules.ramp_factor * gs.p_max;
      gs.cost = overlay.rules.cost;
    } else if (gs.ramp_max <= 0) {
      gs.ramp_max = std::max(gs.u_max - gs.u_min, 0.0);
    }
    gs.ramp_min = -gs.ramp_max;
    g.generators.push_back(gs);
  }
  g.storages = overlay.storages;

  std::map<int, DisturbanceSpec> dist;
  if (overlay.include_case_loads)
    for (const auto& [bus, load] : case_load) dist[bus] = {bus, load, false, 1.0};
  for (const auto& d : overlay.disturbances) {
    if (!live.count(d.bus)) throw ModelError("disturbance at unknown bus " + std::to_string(d.bus));
    dist[d.bus] = d;
  }
  for (const auto& [bus, d] : dist) g.disturbances.push_back(d);
  for (auto& b : g.buses) b.nominal_load = 0.0;

  if (overlay.reference_bus) g.reference_bus = *overlay.reference_bus;
  else if (slack) g.reference_bus = *slack;
  else if (!g.buses.empty()) g.reference_bus = g.buses.front().id;
  g.finalize();
  return g;
}

inline GridModel parse_case(std::string_view text, const SiteOverlay& overlay = {}) {
  return build_grid(parse_matpower(text), overlay);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const StorageSpec& s) {
  j = {{"bus", s.bus},
       {"e_min", s.e_min},
       {"e_max", s.e_max},
       {"s_min", s.s_min},
       {"s_max", s.s_max},
       {"e_initial_mean", s.e_initial_mean},
       {"e_initial_var", s.e_initial_var},
       {"e_terminal_min", s.e_terminal_min},
       {"e_terminal_max", s.e_terminal_max},
       {"h", s.h}};
}

/// Missing keys keep the values already in `s` (used for defaults).
inline void from_json(const nlohmann::json& j, StorageSpec& s) {
  s.bus = j.value("bus", s.bus);
  s.e_min = j.value("e_min", s.e_min);
  s.e_max = j.value("e_max", s.e_max);
  s.s_min = j.value("s_min", s.s_min);
  s.s_max = j.value("s_max", s.s_max);
  s.e_initial_mean = j.value("e_initial_mean", s.e_initial_mean);
  s.e_initial_var = j.value("e_initial_var", s.e_initial_var);
  s.e_terminal_min = j.value("e_terminal_min", s.e_terminal_min);
  s.e_terminal_max = j.value("e_terminal_max", s.e_terminal_max);
  s.h = j.value("h", s.h);
}

/// Overlay document:
///   { "reference_bus": 1, "paper_limits": true, "include_case_loads": true,
///     "generators": {"remove": [3]},
///     "storage": [{"bus": 5, "e_max": 6.0, ...}],
///     "disturbances": [{"bus": 4, "stochastic": true, "nominal": -3.0, "factor_scale": 1.0}],
///     "defaults": {"generator": {...}, "storage": {...}, "line_factor": 0.85} }
inline SiteOverlay parse_overlay(const nlohmann::json& j) {
  SiteOverlay o;
  try {
    if (j.contains("reference_bus")) o.reference_bus = j.at("reference_bus").get<int>();
    o.paper_limits = j.value("paper_limits", true);
    o.include_case_loads = j.value("include_case_loads", true);
    if (j.contains("defaults")) {
      const auto& d = j.at("defaults");
      if (d.contains("generator")) {
        const auto& gd = d.at("generator");
        o.rules.u_min = gd.value("u_min", o.rules.u_min);
        o.rules.u_max_factor = gd.value("u_max_factor", o.rules.u_max_factor);
        o.rules.ramp_factor = gd.value("ramp_factor", o.rules.ramp_factor);
        if (gd.contains("cost")) {
          const auto c = gd.at("cost").get<std::vector<double>>();
          if (c.size() != 3) throw ParseError("generator cost needs three coefficients");
          o.rules.cost = {c[0], c[1], c[2]};
        }
      }
      if (d.contains("storage")) from_json(d.at("storage"), o.rules.storage);
      o.rules.line_factor = d.value("line_factor", o.rules.line_factor);
    }
    if (j.contains("generators") && j.at("generators").contains("remove"))
      o.remove_generators = j.at("generators").at("remove").get<std::vector<int>>();
    if (j.contains("storage"))
      for (const auto& s : j.at("storage")) {
        StorageSpec spec = o.rules.storage;
        from_json(s, spec);
        if (!s.contains("bus")) throw ParseError("storage entry without bus");
        o.storages.push_back(spec);
      }
    if (j.contains("disturbances"))
      for (const auto& d : j.at("disturbances")) {
        DisturbanceSpec spec;
        spec.bus = d.at("bus").get<int>();
        spec.stochastic = d.value("stochastic", true);
        spec.factor_scale = d.value("factor_scale", 1.0);
        spec.nominal = d.value("nominal", std::numeric_limits<double>::quiet_NaN());
        o.disturbances.push_back(spec);
      }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("site overlay: ") + e.what());
  }
  return o;
}

/// Fills disturbance nominals left unspecified in the overlay from the case loads.
inline SiteOverlay resolve_overlay(SiteOverlay o, const MatpowerCase& mc) {
  for (auto& d : o.disturbances) {
    if (!std::isnan(d.nominal)) continue;
    d.nominal = 0.0;
    for (const auto& r : mc.bus)
      if (static_cast<int>(r[matpower::BUS_I]) == d.bus) d.nominal = r[matpower::PD] / mc.base_mva;
  }
  return o;
}

inline GridModel load_case(const std::string& case_path, const std::optional<std::string>& overlay_path = {}) {
  const MatpowerCase mc = parse_matpower(read_text_file(case_path));
  SiteOverlay o;
  if (overlay_path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(*overlay_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(*overlay_path + ": " + e.what());
    }
    o = parse_overlay(j);
  }
  return build_grid(mc, resolve_overlay(o, mc));
}

inline nlohmann::json to_json(const GridModel& g) {
  using nlohmann::json;
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["base_mva"] = g.base_mva;
  j["reference_bus"] = g.reference_bus;
  j["buses"] = json::array();
  for (const auto& b : g.buses)
    j["buses"].push_back({{"id", b.id},
                          {"nominal_load", b.nominal_load},
                          {"has_generator", b.has_generator},
                          {"has_storage", b.has_storage},
                          {"has_disturbance", b.has_disturbance}});
  j["lines"] = json::array();
  for (const auto& l : g.lines)
    j["lines"].push_back({{"from_bus", l.from_bus},
                          {"to_bus", l.to_bus},
                          {"reactance", l.reactance},
                          {"rating", l.rating},
                          {"flow_limit", num(l.flow_limit)}});
  j["generators"] = json::array();
  for (const auto& gs : g.generators) {
    json e = {{"bus", gs.bus},
              {"p_max", gs.p_max},
              {"u_min", gs.u_min},
              {"u_max", gs.u_max},
              {"ramp_min", gs.ramp_min},
              {"ramp_max", gs.ramp_max},
              {"cost", {gs.cost.quadratic, gs.cost.linear, gs.cost.constant}}};
    if (gs.sigma_cap) e["sigma_cap"] = *gs.sigma_cap;
    j["generators"].push_back(e);
  }
  j["storages"] = g.storages;
  j["disturbances"] = json::array();
  for (const auto& d : g.disturbances)
    j["disturbances"].push_back(
        {{"bus", d.bus}, {"nominal", d.nominal}, {"stochastic", d.stochastic}, {"factor_scale", d.factor_scale}});
  j["ptdf"] = json::array();
  for (int r = 0; r < g.ptdf.rows(); ++r) {
    std::vector<double> row(g.ptdf.cols());
    for (int c = 0; c < g.ptdf.cols(); ++c) row[c] = g.ptdf(r, c);
    j["ptdf"].push_back(row);
  }
  return j;
}

inline GridModel grid_from_json(const nlohmann::json& j) {
  GridModel g;
  try {
    g.base_mva = j.at("base_mva").get<double>();
    g.reference_bus = j.at("reference_bus").get<int>();
    for (const auto& b : j.at("buses")) g.buses.push_back({b.at("id").get<int>(), 0.0, false, false, false});
    for (const auto& l : j.at("lines")) {
      Line line;
      line.from_bus = l.at("from_bus").get<int>();
      line.to_bus = l.at("to_bus").get<int>();
      line.reactance = l.at("reactance").get<double>();
      line.rating = l.value("rating", 0.0);
      if (!l.at("flow_limit").is_null()) line.flow_limit = l.at("flow_limit").get<double>();
      g.lines.push_back(line);
    }
    for (const auto& e : j.at("generators")) {
      GeneratorSpec gs;
      gs.bus = e.at("bus").get<int>();
      gs.p_max = e.value("p_max", 0.0);
      gs.u_min = e.at("u_min").get<double>();
      gs.u_max = e.at("u_max").get<double>();
      gs.ramp_min = e.at("ramp_min").get<double>();
      gs.ramp_max = e.at("ramp_max").get<double>();
      const auto c = e.at("cost").get<std::vector<double>>();
      gs.cost = {c.at(0), c.at(1), c.at(2)};
      if (e.contains("sigma_cap")) gs.sigma_cap = e.at("sigma_cap").get<double>();
      g.generators.push_back(gs);
    }
    for (const auto& s : j.at("storages")) {
      StorageSpec spec;
      from_json(s, spec);
      g.storages.push_back(spec);
    }
    for (const auto& d : j.at("disturbances"))
      g.disturbances.push_back({d.at("bus").get<int>(), d.at("nominal").get<double>(),
                                d.at("stochastic").get<bool>(), d.value("factor_scale", 1.0)});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("grid JSON: ") + e.what());
  }
  g.finalize();
  return g;
}

}  // namespace ccopf
