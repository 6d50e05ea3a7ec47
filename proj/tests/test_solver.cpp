#include <gtest/gtest.h>

#include <cmath>

#include "ccopf/interior_point.hpp"

using namespace ccopf;

namespace {

SolveResult run(const ConicProgram& p) {
  InteriorPointBackend ipm;
  return ipm.solve(p, SolverSettings{});
}

}  // namespace

TEST(ConeAlgebra, NesterovToddScalingMapsZToInverseScaledS) {
  solver::ProductCone cone({{solver::ConeKind::nonnegative, 0, 2}, {solver::ConeKind::second_order, 2, 4}});
  Eigen::VectorXd s(6), z(6);
  s << 1.5, 0.2, 3.0, 1.0, -0.5, 0.7;
  z << 0.4, 2.0, 2.0, -0.3, 0.9, 0.2;
  cone.update_scaling(s, z);
  Eigen::VectorXd wz = z, winv_s = s;
  cone.apply_w(wz, false);
  cone.apply_w(winv_s, true);
  EXPECT_LT((wz - winv_s).norm(), 1e-12);
  EXPECT_LT((wz - cone.lambda()).norm(), 1e-12);
  // H = W'W applied to z equals s
  Eigen::VectorXd hz(6);
  cone.apply_h(z, hz);
  EXPECT_LT((hz - s).norm(), 1e-12);
}

TEST(ConeAlgebra, InverseJordanProduct) {
  solver::ProductCone cone({{solver::ConeKind::second_order, 0, 3}});
  Eigen::VectorXd lam(3), d(3);
  lam << 2.0, 0.5, -0.7;
  d << 0.3, 1.1, -0.4;
  const Eigen::VectorXd y = cone.inverse_circ(lam, d);
  EXPECT_LT((cone.circ(lam, y) - d).norm(), 1e-12);
}

TEST(InteriorPoint, LinearBound) {
  ConicProgram p;
  const int x = p.add_variable("x");
  p.add_inequality(AffineExpr(-1.0).add(x, 1.0), ConstraintFamily::other);
  p.objective().linear.add(x, 1.0);
  const auto r = run(p);
  ASSERT_EQ(r.status, SolveStatus::optimal);
  EXPECT_NEAR(r.primal[0], 1.0, 1e-6);
  EXPECT_NEAR(r.objective, 1.0, 1e-6);
}

TEST(InteriorPoint, ConeNormOfFixedVector) {
  ConicProgram p;
  const int t = p.add_variable("t");
  p.add_cone(AffineExpr().add(t, 1.0), {AffineExpr(3.0), AffineExpr(4.0)}, ConstraintFamily::other);
  p.objective().linear.add(t, 1.0);
  const auto r = run(p);
  ASSERT_EQ(r.status, SolveStatus::optimal);
  EXPECT_NEAR(r.primal[0], 5.0, 1e-6);
}

TEST(InteriorPoint, DetectsInfeasibility) {
  ConicProgram p;
  const int x = p.add_variable("x");
  p.add_inequality(AffineExpr(-1.0).add(x, 1.0), ConstraintFamily::other);
  p.add_inequality(AffineExpr().add(x, -1.0), ConstraintFamily::other);
  p.objective().linear.add(x, 1.0);
  EXPECT_EQ(run(p).status, SolveStatus::infeasible);
}

TEST(InteriorPoint, DetectsUnboundedness) {
  ConicProgram p;
  const int x = p.add_variable("x");
  p.add_inequality(AffineExpr(1.0).add(x, -1.0), ConstraintFamily::other);  // x <= 1
  p.objective().linear.add(x, 1.0);
  EXPECT_EQ(run(p).status, SolveStatus::unbounded);
}

TEST(InteriorPoint, QuadraticWithEqualityAndCone) {
  // min x^2 + y^2 + z  s.t. x + y == 2, ||(x - 1, y)|| <= z
  ConicProgram p;
  const int x = p.add_variable("x"), y = p.add_variable("y"), z = p.add_variable("z");
  p.add_equality(AffineExpr(-2.0).add(x, 1.0).add(y, 1.0), ConstraintFamily::other);
  p.add_cone(AffineExpr().add(z, 1.0), {AffineExpr(-1.0).add(x, 1.0), AffineExpr().add(y, 1.0)},
             ConstraintFamily::other);
  p.objective().quadratic = {{x, x, 1.0}, {y, y, 1.0}};
  p.objective().linear.add(z, 1.0);
  const auto r = run(p);
  ASSERT_EQ(r.status, SolveStatus::optimal);
  // oracle: by symmetry around the line x + y = 2, minimize over y on a fine grid
  double best = 1e300;
  for (int i = 0; i <= 200000; ++i) {
    const double yy = -1.0 + 3.0 * i / 200000.0, xx = 2.0 - yy;
    best = std::min(best, xx * xx + yy * yy + std::hypot(xx - 1.0, yy));
  }
  EXPECT_NEAR(r.objective, best, 1e-6);
  EXPECT_LT(p.max_violation(r.primal), 1e-7);
}

TEST(InteriorPoint, RejectsUndeclaredVariable) {
  ConicProgram p;
  p.add_variable("x");
  p.add_inequality(AffineExpr().add(3, 1.0), ConstraintFamily::other);
  InteriorPointBackend ipm;
  EXPECT_THROW(ipm.solve(p, SolverSettings{}), ArgumentError);
}
