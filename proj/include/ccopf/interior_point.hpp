#pragma once

// Primal-dual interior-point method for conic programs with a convex
// quadratic objective, posed in homogeneous self-dual embedding form:
//
//   minimize ½x'Px + q'x   s.t.  Ax + s = b,  s in K
//
// with Mehrotra predictor-corrector steps and Nesterov-Todd scaling. Each
// iteration factors the quasi-definite KKT matrix [P A'; A -H] once and
// solves it for two right-hand sides per direction.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <vector>

#include "ccopf/cones.hpp"
#include "ccopf/conic_program.hpp"
#include "ccopf/solver.hpp"
#include "ccopf/sparse_ldl.hpp"

namespace ccopf {

namespace detail {

struct StandardForm {
  using Sparse = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
  int n = 0;
  int m = 0;
  Sparse P;  // full symmetric
  Eigen::VectorXd q;
  double offset = 0.0;
  Sparse A;
  Eigen::VectorXd b;
  solver::ProductCone cone;
};

inline StandardForm to_standard_form(const ConicProgram& prog) {
  StandardForm f;
  f.n = prog.num_variables();
  using Triplet = Eigen::Triplet<double, int>;
  std::vector<Triplet> pt;
  for (const auto& t : prog.objective().quadratic) {
    if (t.i == t.j) {
      pt.emplace_back(t.i, t.i, 2.0 * t.coef);
    } else {
      pt.emplace_back(t.i, t.j, t.coef);
      pt.emplace_back(t.j, t.i, t.coef);
    }
  }
  f.P.resize(f.n, f.n);
  f.P.setFromTriplets(pt.begin(), pt.end());
  f.q = Eigen::VectorXd::Zero(f.n);
  for (const auto& t : prog.objective().linear.terms) f.q[t.var] += t.coef;
  f.offset = prog.objective().linear.constant;

  std::vector<Triplet> at;
  std::vector<double> b;
  std::vector<solver::ConeBlock> blocks;
  int row = 0;
  auto emit = [&](const AffineExpr& e, double sign) {
    // row of A is sign * coefficients, b = -sign * constant  (s = b - A x)
    for (const auto& t : e.terms) at.emplace_back(row, t.var, sign * t.coef);
    b.push_back(-sign * e.constant);
    ++row;
  };
  if (!prog.equalities().empty()) {
    const int start = row;
    for (const auto& c : prog.equalities()) emit(c.expr, 1.0);
    blocks.push_back({solver::ConeKind::zero, start, row - start});
  }
  if (!prog.inequalities().empty()) {
    const int start = row;
    for (const auto& c : prog.inequalities()) emit(c.expr, -1.0);
    blocks.push_back({solver::ConeKind::nonnegative, start, row - start});
  }
  for (const auto& c : prog.cones()) {
    const int start = row;
    emit(c.head, -1.0);
    for (const auto& e : c.tail) emit(e, -1.0);
    blocks.push_back({solver::ConeKind::second_order, start, row - start});
  }
  f.m = row;
  f.A.resize(f.m, f.n);
  f.A.setFromTriplets(at.begin(), at.end());
  f.A.makeCompressed();
  f.b = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  f.cone = solver::ProductCone(std::move(blocks));
  return f;
}

/// Quasi-definite KKT system [P + dI, A'; A, -(H + dI)] with a fixed pattern.
///
/// A second-order cone block of H = eta^2 (2 w w' - J) is never stored densely.
/// It is written as eta^2 (D + u u' - v v') with D diagonal and two extra
/// rows/columns per cone, [.. eta u, eta v; eta u', 1, 0; eta v', 0, -1], whose
/// Schur complement restores -H. This keeps the factor sparse for cones with
/// long tails.
class KktSystem {
public:
  using Sparse = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

  explicit KktSystem(const StandardForm& f) : f_(f) {
    const int n = f.n, m = f.m;
    int socs = 0;
    for (const auto& blk : f.cone.blocks()) socs += blk.kind == solver::ConeKind::second_order;
    dim_ = n + m + 2 * socs;
    using Triplet = Eigen::Triplet<double, int>;
    std::vector<Triplet> trip;
    for (int j = 0; j < n; ++j) {
      trip.emplace_back(j, j, 0.0);
      for (Sparse::InnerIterator it(f.P, j); it; ++it)
        if (it.row() < j) trip.emplace_back(static_cast<int>(it.row()), j, 0.0);
    }
    for (int j = 0; j < n; ++j)
      for (Sparse::InnerIterator it(f.A, j); it; ++it) trip.emplace_back(j, n + static_cast<int>(it.row()), 0.0);
    for (int i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, 0.0);
    int extra = n + m;
    for (const auto& blk : f.cone.blocks()) {
      if (blk.kind != solver::ConeKind::second_order) continue;
      for (int r = 0; r < blk.dim; ++r) {
        trip.emplace_back(n + blk.offset + r, extra, 0.0);
        trip.emplace_back(n + blk.offset + r, extra + 1, 0.0);
      }
      trip.emplace_back(extra, extra, 0.0);
      trip.emplace_back(extra + 1, extra + 1, 0.0);
      extra += 2;
    }
    kkt_.resize(dim_, dim_);
    kkt_.setFromTriplets(trip.begin(), trip.end());
    kkt_.makeCompressed();

    base_.assign(kkt_.nonZeros(), 0.0);
    diag_pos_.resize(dim_);
    for (int j = 0; j < dim_; ++j) diag_pos_[j] = position(j, j);
    for (int j = 0; j < n; ++j)
      for (Sparse::InnerIterator it(f.P, j); it; ++it)
        if (it.row() <= j) base_[position(static_cast<int>(it.row()), j)] += it.value();
    for (int j = 0; j < n; ++j)
      for (Sparse::InnerIterator it(f.A, j); it; ++it)
        base_[position(j, n + static_cast<int>(it.row()))] += it.value();
    extra = n + m;
    std::vector<int> signs(dim_, 1);
    for (int i = n; i < n + m; ++i) signs[i] = -1;
    // the +1 extra of a cone must be eliminated before its -1 partner
    std::vector<std::pair<int, int>> order;
    for (std::size_t c = 0; c < f.cone.blocks().size(); ++c) {
      const auto& blk = f.cone.blocks()[c];
      if (blk.kind != solver::ConeKind::second_order) continue;
      SocSlots slots;
      slots.cone = c;
      slots.extra = extra;
      for (int r = 0; r < blk.dim; ++r) {
        slots.u_pos.push_back(position(n + blk.offset + r, extra));
        slots.v_pos.push_back(position(n + blk.offset + r, extra + 1));
      }
      base_[diag_pos_[extra]] = 1.0;
      base_[diag_pos_[extra + 1]] = -1.0;
      signs[extra + 1] = -1;
      order.emplace_back(extra, extra + 1);
      socs_.push_back(std::move(slots));
      extra += 2;
    }
    ldl_.analyze(kkt_, signs, order);
  }

  /// Refactors with H from the cone's current scaling (identity when `unit`).
  void factor(const solver::ProductCone& cone, double reg, bool unit) {
    const int n = f_.n;
    double* v = kkt_.valuePtr();
    std::copy(base_.begin(), base_.end(), v);
    for (int j = 0; j < n; ++j) v[diag_pos_[j]] += reg;
    h_unit_ = unit;
    for (const auto& blk : cone.blocks()) {
      if (blk.kind == solver::ConeKind::second_order) continue;
      for (int i = blk.offset; i < blk.offset + blk.dim; ++i) {
        double h = 0.0;
        if (blk.kind == solver::ConeKind::nonnegative) h = unit ? 1.0 : cone.h_diag_linear(i);
        v[diag_pos_[n + i]] = -h - reg;
      }
    }
    const Eigen::VectorXd& w = cone.scaling_point();
    for (const auto& slots : socs_) {
      const auto& blk = cone.blocks()[slots.cone];
      const int z0 = n + blk.offset;
      if (unit) {
        for (int r = 0; r < blk.dim; ++r) v[diag_pos_[z0 + r]] = -1.0 - reg;
        continue;
      }
      // 2ww' - J = D + uu' - vv' with D = diag(1/2, 1, ..., 1), u = (u0, u1 w1),
      // v = (0, v1 w1); a constant d1 keeps v1 |w1| bounded, so the tail
      // I + (u1^2 - v1^2) w1 w1' has no cancellation when w0 is large
      const double e = cone.eta(slots.cone);
      const double w0 = std::max(w[blk.offset], 1.0);
      const double d1 = 0.5;
      const double u0 = std::sqrt(2.0 * w0 * w0 - 1.0 - d1);
      const double u1 = 2.0 * w0 / u0;
      const double v1 = std::sqrt(2.0 + 2.0 * d1) / u0;
      v[diag_pos_[z0]] = -e * e * d1 - reg;
      v[slots.u_pos[0]] = e * u0;
      v[slots.v_pos[0]] = 0.0;
      for (int r = 1; r < blk.dim; ++r) {
        v[diag_pos_[z0 + r]] = -e * e - reg;
        v[slots.u_pos[r]] = e * u1 * w[blk.offset + r];
        v[slots.v_pos[r]] = e * v1 * w[blk.offset + r];
      }
    }
    ldl_.factorize(kkt_);
  }

  /// Solves the unregularized system with iterative refinement.
  Eigen::VectorXd solve(const solver::ProductCone& cone, const Eigen::VectorXd& rhs, int refine) const {
    const Eigen::Index nm = rhs.size();
    Eigen::VectorXd work = Eigen::VectorXd::Zero(dim_);
    work.head(nm) = rhs;
    ldl_.solve(work);
    Eigen::VectorXd sol = work.head(nm);
    const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < refine; ++it) {
      const Eigen::VectorXd r = rhs - multiply(cone, sol);
      if (r.lpNorm<Eigen::Infinity>() <= 1e-14 * scale) break;
      work.setZero();
      work.head(nm) = r;
      ldl_.solve(work);
      sol += work.head(nm);
    }
    last_residual_ = (rhs - multiply(cone, sol)).lpNorm<Eigen::Infinity>() / scale;
    return sol;
  }

  std::size_t factor_nonzeros() const { return ldl_.factor_nonzeros(); }
  int regularized_pivots() const { return ldl_.regularized_pivots(); }
  double last_residual() const { return last_residual_; }

private:
  Eigen::VectorXd multiply(const solver::ProductCone& cone, const Eigen::VectorXd& v) const {
    const int n = f_.n, m = f_.m;
    Eigen::VectorXd out(n + m);
    const auto vx = v.head(n);
    const auto vz = v.tail(m);
    out.head(n) = f_.P * vx + f_.A.transpose() * vz;
    Eigen::VectorXd hz(m);
    if (h_unit_) {
      hz = vz;
      for (const auto& blk : cone.blocks())
        if (blk.kind == solver::ConeKind::zero) hz.segment(blk.offset, blk.dim).setZero();
    } else {
      cone.apply_h(vz, hz);
    }
    out.tail(m) = f_.A * vx - hz;
    return out;
  }

  int position(int row, int col) const {
    const int* outer = kkt_.outerIndexPtr();
    const int* inner = kkt_.innerIndexPtr();
    const int* lo = inner + outer[col];
    const int* hi = inner + outer[col + 1];
    const int* it = std::lower_bound(lo, hi, row);
    return static_cast<int>(it - inner);
  }

  const StandardForm& f_;
  Sparse kkt_;
  std::vector<double> base_;
  std::vector<int> diag_pos_;
  struct SocSlots {
    std::size_t cone = 0;
    int extra = 0;
    std::vector<int> u_pos, v_pos;
  };
  std::vector<SocSlots> socs_;
  int dim_ = 0;
  linalg::SparseLdl ldl_;
  bool h_unit_ = false;
  mutable double last_residual_ = 0.0;
};

}  // namespace detail

class InteriorPointBackend final : public ConicBackend {
public:
  std::string name() const override { return "hsde-ipm"; }

  SolveResult solve(const ConicProgram& program, const SolverSettings& settings) const override {
    program.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    using Vec = Eigen::VectorXd;

    detail::StandardForm f = detail::to_standard_form(program);
    const int n = f.n, m = f.m;
    solver::ProductCone& cone = f.cone;
    detail::KktSystem kkt(f);

    SolveResult result;
    result.backend = name();
    const double reg = settings.static_regularization;
    double reg_now = reg;

    // starting point: solve [P A'; A -I][x; z] = [-q; b]
    kkt.factor(cone, reg, true);
    Vec rhs(n + m);
    rhs << -f.q, f.b;
    Vec sol = kkt.solve(cone, rhs, settings.refinement_steps);
    Vec x = sol.head(n);
    Vec z = sol.tail(m);
    Vec s = -z;
    for (const auto& blk : cone.blocks())
      if (blk.kind == solver::ConeKind::zero) s.segment(blk.offset, blk.dim).setZero();
    cone.shift_to_interior(s);
    cone.shift_to_interior(z);
    double tau = 1.0, kappa = 1.0;

    const double norm_b = f.b.size() ? f.b.lpNorm<Eigen::Infinity>() : 0.0;
    const double norm_q = f.q.size() ? f.q.lpNorm<Eigen::Infinity>() : 0.0;
    const double degree = cone.degree();
    auto inf_norm = [](const Vec& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };

    for (int iter = 0;; ++iter) {
      result.iterations = iter;
      const Vec Px = f.P * x;
      const Vec Ax = f.A * x;
      const Vec Atz = f.A.transpose() * z;
      const double xPx = x.dot(Px);
      const double qx = f.q.dot(x);
      const double bz = f.b.dot(z);

      const Vec r_x = Px + Atz + f.q * tau;
      const Vec r_z = Ax + s - f.b * tau;
      const double r_tau = qx + bz + kappa + xPx / tau;

      // convergence on the normalized iterate
      const double primal_obj = 0.5 * xPx / (tau * tau) + qx / tau;
      const double dual_obj = -0.5 * xPx / (tau * tau) - bz / tau;
      const double res_p = inf_norm(r_z) / tau /
                           std::max({1.0, norm_b, inf_norm(Ax) / tau, inf_norm(s) / tau});
      const double res_d = inf_norm(r_x) / tau /
                           std::max({1.0, norm_q, inf_norm(Px) / tau, inf_norm(Atz) / tau});
      const double gap_abs = std::abs(primal_obj - dual_obj);
      const double gap_rel = gap_abs / std::max(1.0, std::min(std::abs(primal_obj), std::abs(dual_obj)));
      result.residuals = {res_p, res_d, std::min(gap_abs, gap_rel)};
      if (settings.verbose)
        std::cerr << "ipm " << iter << " pobj " << primal_obj << " dobj " << dual_obj << " rp " << res_p
                  << " rd " << res_d << " gap " << gap_abs << " tau " << tau << " kappa " << kappa << '\n';

      if (res_p <= settings.tol && res_d <= settings.tol && (gap_abs <= settings.tol || gap_rel <= settings.tol)) {
        result.status = SolveStatus::optimal;
        x /= tau;
        result.primal.assign(x.data(), x.data() + n);
        result.objective = primal_obj + f.offset;
        break;
      }
      // infeasibility certificates (scale invariant in (x, z, s))
      if (bz < -settings.tol_infeasible * std::max(1.0, inf_norm(z)) &&
          inf_norm(Atz) <= -settings.tol_infeasible * bz * 1e2 / std::max(1.0, norm_b)) {
        result.status = SolveStatus::infeasible;
        break;
      }
      if (qx < -settings.tol_infeasible * std::max(1.0, inf_norm(x)) &&
          inf_norm(Px) <= -settings.tol_infeasible * qx * 1e2 &&
          inf_norm(Ax + s) <= -settings.tol_infeasible * qx * 1e2) {
        result.status = SolveStatus::unbounded;
        break;
      }
      if (iter >= settings.max_iterations ||
          (settings.time_limit_seconds > 0 && elapsed() > settings.time_limit_seconds)) {
        result.status = SolveStatus::iteration_limit;
        break;
      }
      if (!x.allFinite() || !z.allFinite() || !s.allFinite() || !std::isfinite(tau) || !std::isfinite(kappa)) {
        result.status = SolveStatus::numerical_failure;
        break;
      }

      cone.update_scaling(s, z);
      kkt.factor(cone, reg_now, false);
      const Vec& lam = cone.lambda();

      const Vec xi = x / tau;
      const Vec Pxi = Px / tau;
      const Vec qp = f.q + 2.0 * Pxi;
      const double xiPxi = xi.dot(Pxi);

      rhs << -f.q, f.b;
      const Vec sol1 = kkt.solve(cone, rhs, settings.refinement_steps);
      const Vec x1 = sol1.head(n), z1 = sol1.tail(m);
      const double denom = qp.dot(x1) + f.b.dot(z1) - xiPxi - kappa / tau;

      struct Direction {
        Vec dx, dz, ds;
        double dtau, dkappa;
      };
      auto direction = [&](const Vec& d_x, const Vec& d_z, const Vec& d_s, double d_tau, double d_kappa) {
        Vec dsp = cone.inverse_circ(lam, d_s);
        cone.apply_w(dsp, false);
        Vec rhs2(n + m);
        rhs2 << -d_x, -d_z + dsp;
        const Vec sol2 = kkt.solve(cone, rhs2, settings.refinement_steps);
        Direction d;
        const Vec x2 = sol2.head(n), z2 = sol2.tail(m);
        d.dtau = (d_kappa / tau - d_tau - qp.dot(x2) - f.b.dot(z2)) / denom;
        d.dx = x2 + d.dtau * x1;
        d.dz = z2 + d.dtau * z1;
        Vec hdz(m);
        cone.apply_h(d.dz, hdz);
        d.ds = -dsp - hdz;
        d.dkappa = -(d_kappa + kappa * d.dtau) / tau;
        return d;
      };
      auto step_to_boundary = [&](const Direction& d) {
        double a = std::min(cone.max_step(s, d.ds, 1.0), cone.max_step(z, d.dz, 1.0));
        if (d.dtau < 0) a = std::min(a, -tau / d.dtau);
        if (d.dkappa < 0) a = std::min(a, -kappa / d.dkappa);
        return a;
      };

      // predictor
      const Vec lam_sq = cone.circ(lam, lam);
      const Direction aff = direction(r_x, r_z, lam_sq, r_tau, tau * kappa);
      const double alpha_aff = step_to_boundary(aff);
      const double mu = (cone.complementarity(s, z) + tau * kappa) / (degree + 1.0);
      const double sigma = std::pow(1.0 - alpha_aff, 3);

      // corrector
      Vec ws = aff.ds;
      cone.apply_w(ws, true);
      Vec wz = aff.dz;
      cone.apply_w(wz, false);
      Vec d_s = lam_sq + cone.circ(ws, wz);
      cone.add_identity(d_s, -sigma * mu);
      const double d_kappa = tau * kappa + aff.dtau * aff.dkappa - sigma * mu;
      const Direction dir = direction((1.0 - sigma) * r_x, (1.0 - sigma) * r_z, d_s, (1.0 - sigma) * r_tau, d_kappa);
      const double alpha = std::min(1.0, 0.99 * step_to_boundary(dir));
      if (settings.verbose) std::cerr << "    reg " << kkt.regularized_pivots() << " res " << kkt.last_residual() << " alpha_aff " << alpha_aff << " sigma " << sigma << " alpha " << alpha << '\n';
      const bool finite = dir.dx.allFinite() && dir.dz.allFinite() && dir.ds.allFinite() &&
                          std::isfinite(dir.dtau) && std::isfinite(dir.dkappa);
      if (!finite || !(alpha >= 1e-12)) {
        // stalled or broken factor: refactor with stronger regularization,
        // else settle for a reduced-accuracy optimum when the current iterate
        // supports it
        if (reg_now < 1e-5) {
          reg_now *= 100.0;
          continue;
        }
        const double tr = settings.tol_reduced;
        if (res_p <= tr && res_d <= tr && (gap_abs <= tr || gap_rel <= tr)) {
          result.status = SolveStatus::optimal;
          result.reduced_accuracy = true;
          x /= tau;
          result.primal.assign(x.data(), x.data() + n);
          result.objective = primal_obj + f.offset;
        } else {
          result.status = SolveStatus::numerical_failure;
        }
        break;
      }
      reg_now = reg;
      x += alpha * dir.dx;
      z += alpha * dir.dz;
      s += alpha * dir.ds;
      tau += alpha * dir.dtau;
      kappa += alpha * dir.dkappa;
    }
    result.solve_time = elapsed();
    return result;
  }
};

/// Solves with the default backend.
inline SolveResult solve(const ConicProgram& program, const SolverSettings& settings = {}) {
  return InteriorPointBackend().solve(program, settings);
}

}  // namespace ccopf
