#pragma once

// Backend contract for solving a ConicProgram, plus the default backend.

#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "ccopf/conic_program.hpp"

namespace ccopf {

enum class SolveStatus { optimal, infeasible, unbounded, numerical_failure, iteration_limit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::numerical_failure: return "numerical_failure";
    case SolveStatus::iteration_limit: return "iteration_limit";
  }
  return "numerical_failure";
}

struct SolverSettings {
  int max_iterations = 100;
  double tol = 1e-8;               // relative primal/dual residual and gap
  double tol_infeasible = 1e-8;    // certificate tolerance
  double time_limit_seconds = 0;   // 0 = unlimited
  double static_regularization = 1e-8;
  int refinement_steps = 10;
  // accepted when the iteration stalls at an iterate this accurate
  double tol_reduced = 1e-6;
  bool verbose = false;
};

inline void from_json(const nlohmann::json& j, SolverSettings& s) {
  s.max_iterations = j.value("max_iterations", s.max_iterations);
  s.tol = j.value("tol", s.tol);
  s.tol_reduced = j.value("tol_reduced", s.tol_reduced);
  s.time_limit_seconds = j.value("time_limit_seconds", s.time_limit_seconds);
}

struct Residuals {
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
};

struct SolveResult {
  SolveStatus status = SolveStatus::numerical_failure;
  std::vector<double> primal;
  double objective = 0.0;
  double solve_time = 0.0;
  int iterations = 0;
  Residuals residuals;
  std::string backend;
  bool reduced_accuracy = false;  // optimal only to SolverSettings::tol_reduced
};

class ConicBackend {
public:
  virtual ~ConicBackend() = default;
  virtual std::string name() const = 0;
  /// Non-optimal outcomes are reported through SolveResult::status; a
  /// malformed program throws ArgumentError before any work is done.
  virtual SolveResult solve(const ConicProgram& program, const SolverSettings& settings) const = 0;
};

}  // namespace ccopf
