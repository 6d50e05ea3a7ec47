#pragma once

// Solver-neutral representation of a second-order cone program with a
// convex quadratic objective:
//
//   minimize    sum_k q_k x_{i_k} x_{j_k} + c'x + c0
//   subject to  equality expressions          == 0
//               inequality expressions        >= 0
//               || tail expressions ||_2      <= head expression

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccopf/errors.hpp"

namespace ccopf {

struct LinearTerm {
  int var = 0;
  double coef = 0.0;
  bool operator==(const LinearTerm&) const = default;
};

/// Affine expression sum_i coef_i * x_{var_i} + constant.
struct AffineExpr {
  std::vector<LinearTerm> terms;
  double constant = 0.0;

  AffineExpr() = default;
  explicit AffineExpr(double c) : constant(c) {}

  AffineExpr& add(int var, double coef) {
    if (coef != 0.0) terms.push_back({var, coef});
    return *this;
  }
  AffineExpr& add(const AffineExpr& other, double scale = 1.0) {
    for (const auto& t : other.terms) add(t.var, scale * t.coef);
    constant += scale * other.constant;
    return *this;
  }

  bool has_variables() const noexcept { return !terms.empty(); }

  /// Merges duplicate variable references and drops exact zeros.
  void canonicalize() {
    std::map<int, double> acc;
    for (const auto& t : terms) acc[t.var] += t.coef;
    terms.clear();
    for (const auto& [v, c] : acc)
      if (c != 0.0) terms.push_back({v, c});
  }

  double evaluate(std::span<const double> x) const {
    double v = constant;
    for (const auto& t : terms) v += t.coef * x[t.var];
    return v;
  }

  bool operator==(const AffineExpr&) const = default;
};

enum class ConstraintFamily {
  balance_mean,
  balance_gain,
  generation,
  ramp,
  storage_injection,
  storage_state,
  storage_terminal,
  line_flow,
  sigma_cap,
  sigma_link,
  other
};

inline const char* to_string(ConstraintFamily f) {
  switch (f) {
    case ConstraintFamily::balance_mean: return "balance_mean";
    case ConstraintFamily::balance_gain: return "balance_gain";
    case ConstraintFamily::generation: return "generation";
    case ConstraintFamily::ramp: return "ramp";
    case ConstraintFamily::storage_injection: return "storage_injection";
    case ConstraintFamily::storage_state: return "storage_state";
    case ConstraintFamily::storage_terminal: return "storage_terminal";
    case ConstraintFamily::line_flow: return "line_flow";
    case ConstraintFamily::sigma_cap: return "sigma_cap";
    case ConstraintFamily::sigma_link: return "sigma_link";
    case ConstraintFamily::other: return "other";
  }
  return "other";
}

struct EqualityConstraint {
  AffineExpr expr;  // == 0
  ConstraintFamily family = ConstraintFamily::other;
};

struct InequalityConstraint {
  AffineExpr expr;  // >= 0
  ConstraintFamily family = ConstraintFamily::other;
};

struct ConeConstraint {
  AffineExpr head;               // t
  std::vector<AffineExpr> tail;  // ||tail|| <= t
  ConstraintFamily family = ConstraintFamily::other;
};

/// coef * x_i * x_j, with i <= j.
struct QuadraticTerm {
  int i = 0;
  int j = 0;
  double coef = 0.0;
};

struct QuadraticObjective {
  std::vector<QuadraticTerm> quadratic;
  AffineExpr linear;  // constant holds the objective offset

  double evaluate(std::span<const double> x) const {
    double v = linear.evaluate(x);
    for (const auto& q : quadratic) v += q.coef * x[q.i] * x[q.j];
    return v;
  }
};

class ConicProgram {
public:
  int add_variable(std::string name) {
    names_.push_back(std::move(name));
    return static_cast<int>(names_.size()) - 1;
  }

  void add_equality(AffineExpr expr, ConstraintFamily family) {
    expr.canonicalize();
    equalities_.push_back({std::move(expr), family});
  }
  void add_inequality(AffineExpr expr, ConstraintFamily family) {
    expr.canonicalize();
    inequalities_.push_back({std::move(expr), family});
  }
  void add_cone(AffineExpr head, std::vector<AffineExpr> tail, ConstraintFamily family) {
    head.canonicalize();
    for (auto& e : tail) e.canonicalize();
    cones_.push_back({std::move(head), std::move(tail), family});
  }

  QuadraticObjective& objective() noexcept { return objective_; }
  const QuadraticObjective& objective() const noexcept { return objective_; }

  int num_variables() const noexcept { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& variable_names() const noexcept { return names_; }
  const std::vector<EqualityConstraint>& equalities() const noexcept { return equalities_; }
  const std::vector<InequalityConstraint>& inequalities() const noexcept { return inequalities_; }
  const std::vector<ConeConstraint>& cones() const noexcept { return cones_; }

  /// Throws ArgumentError when an expression references an undeclared
  /// variable, a coefficient is not finite, or a cone has no tail.
  void validate() const {
    const int n = num_variables();
    auto check = [n](const AffineExpr& e, const char* what) {
      if (!std::isfinite(e.constant)) throw ArgumentError(std::string("non-finite constant in ") + what);
      for (const auto& t : e.terms) {
        if (t.var < 0 || t.var >= n) throw ArgumentError(std::string("undeclared variable in ") + what);
        if (!std::isfinite(t.coef)) throw ArgumentError(std::string("non-finite coefficient in ") + what);
      }
    };
    for (const auto& c : equalities_) check(c.expr, "equality");
    for (const auto& c : inequalities_) check(c.expr, "inequality");
    for (const auto& c : cones_) {
      if (c.tail.empty()) throw ArgumentError("second-order cone with empty tail");
      check(c.head, "cone head");
      for (const auto& e : c.tail) check(e, "cone tail");
    }
    check(objective_.linear, "objective");
    for (const auto& q : objective_.quadratic) {
      if (q.i < 0 || q.j < 0 || q.i >= n || q.j >= n || q.i > q.j)
        throw ArgumentError("quadratic objective term out of range or not upper-triangular");
      if (!std::isfinite(q.coef)) throw ArgumentError("non-finite quadratic coefficient");
      if (q.i == q.j && q.coef < 0) throw ArgumentError("negative diagonal quadratic coefficient");
    }
  }

  /// Constraint counts per family; cones and linear rows are tallied apart.
  std::map<std::string, int> census() const {
    std::map<std::string, int> out;
    for (const auto& c : equalities_) ++out[std::string("eq:") + to_string(c.family)];
    for (const auto& c : inequalities_) ++out[std::string("ineq:") + to_string(c.family)];
    for (const auto& c : cones_) ++out[std::string("soc:") + to_string(c.family)];
    return out;
  }

  /// Largest violation over all constraints at x (equalities in absolute value,
  /// inequalities and cones one-sided).
  double max_violation(std::span<const double> x) const {
    double worst = 0.0;
    for (const auto& c : equalities_) worst = std::max(worst, std::abs(c.expr.evaluate(x)));
    for (const auto& c : inequalities_) worst = std::max(worst, -c.expr.evaluate(x));
    for (const auto& c : cones_) {
      double sq = 0.0;
      for (const auto& e : c.tail) {
        const double v = e.evaluate(x);
        sq += v * v;
      }
      worst = std::max(worst, std::sqrt(sq) - c.head.evaluate(x));
    }
    return worst;
  }

  /// Documented JSON problem format: variables, sparse (row, var, coef)
  /// triplets per block, cone arities.
  nlohmann::json to_json() const {
    using nlohmann::json;
    auto triplets = [](const auto& rows, auto&& pick) {
      json t = json::array();
      json rhs = json::array();
      json fam = json::array();
      int r = 0;
      for (const auto& row : rows) {
        const AffineExpr& e = pick(row);
        for (const auto& term : e.terms) t.push_back({r, term.var, term.coef});
        rhs.push_back(e.constant);
        fam.push_back(to_string(row.family));
        ++r;
      }
      return json{{"triplets", t}, {"constant", rhs}, {"family", fam}};
    };
    json j;
    j["format"] = "ccopf-conic-v1";
    j["variables"] = names_;
    j["equalities"] = triplets(equalities_, [](const EqualityConstraint& c) -> const AffineExpr& { return c.expr; });
    j["inequalities"] = triplets(inequalities_, [](const InequalityConstraint& c) -> const AffineExpr& { return c.expr; });
    json cones = json::array();
    for (const auto& c : cones_) {
      json rows = json::array();
      auto emit = [&rows](const AffineExpr& e) {
        json terms = json::array();
        for (const auto& t : e.terms) terms.push_back({t.var, t.coef});
        rows.push_back({{"terms", terms}, {"constant", e.constant}});
      };
      emit(c.head);
      for (const auto& e : c.tail) emit(e);
      cones.push_back({{"family", to_string(c.family)}, {"dim", c.tail.size() + 1}, {"rows", rows}});
    }
    j["cones"] = cones;
    json quad = json::array();
    for (const auto& q : objective_.quadratic) quad.push_back({q.i, q.j, q.coef});
    json lin = json::array();
    for (const auto& t : objective_.linear.terms) lin.push_back({t.var, t.coef});
    j["objective"] = {{"quadratic", quad}, {"linear", lin}, {"constant", objective_.linear.constant}};
    return j;
  }

private:
  std::vector<std::string> names_;
  std::vector<EqualityConstraint> equalities_;
  std::vector<InequalityConstraint> inequalities_;
  std::vector<ConeConstraint> cones_;
  QuadraticObjective objective_;
};

}  // namespace ccopf
