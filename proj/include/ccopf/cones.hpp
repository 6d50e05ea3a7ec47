#pragma once

// Cone algebra for the primal-dual interior-point method: Jordan products,
// Nesterov-Todd scalings and step-to-boundary computations for the product
// cone {0}^p x R_+^l x Q^{d_1} x ... x Q^{d_k}.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ccopf::solver {

enum class ConeKind { zero, nonnegative, second_order };

struct ConeBlock {
  ConeKind kind;
  int offset;
  int dim;
};

using Vec = Eigen::VectorXd;

class ProductCone {
public:
  ProductCone() = default;
  explicit ProductCone(std::vector<ConeBlock> blocks) : blocks_(std::move(blocks)) {
    for (const auto& b : blocks_) {
      dim_ = std::max(dim_, b.offset + b.dim);
      if (b.kind == ConeKind::nonnegative) degree_ += b.dim;
      if (b.kind == ConeKind::second_order) degree_ += 1;
    }
    eta_.assign(blocks_.size(), 1.0);
  }

  const std::vector<ConeBlock>& blocks() const noexcept { return blocks_; }
  int dim() const noexcept { return dim_; }
  int degree() const noexcept { return degree_; }

  /// s'z restricted to the non-zero cones.
  double complementarity(const Vec& s, const Vec& z) const {
    double acc = 0.0;
    for (const auto& b : blocks_)
      if (b.kind != ConeKind::zero) acc += s.segment(b.offset, b.dim).dot(z.segment(b.offset, b.dim));
    return acc;
  }

  /// Identity element e (zero on the zero cone).
  void add_identity(Vec& v, double alpha) const {
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) v.segment(b.offset, b.dim).array() += alpha;
      if (b.kind == ConeKind::second_order) v[b.offset] += alpha;
    }
  }

  /// Moves v into the interior of the cone (used for the starting point).
  void shift_to_interior(Vec& v) const {
    double worst = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::zero) {
        continue;
      }
      any = true;
      if (b.kind == ConeKind::nonnegative) {
        worst = std::max(worst, -v.segment(b.offset, b.dim).minCoeff());
      } else {
        worst = std::max(worst, v.segment(b.offset + 1, b.dim - 1).norm() - v[b.offset]);
      }
    }
    if (!any) return;
    if (worst >= -1e-8 * std::max(1.0, v.norm())) add_identity(v, 1.0 + std::max(0.0, worst));
  }

  /// Computes Nesterov-Todd scaling W (W z = W^{-1} s = lambda) at (s, z).
  void update_scaling(const Vec& s, const Vec& z) {
    lambda_.setZero(dim_);
    w_.setZero(dim_);
    for (std::size_t c = 0; c < blocks_.size(); ++c) {
      const auto& b = blocks_[c];
      if (b.kind == ConeKind::nonnegative) {
        for (int i = b.offset; i < b.offset + b.dim; ++i) {
          w_[i] = std::sqrt(s[i] / z[i]);
          lambda_[i] = std::sqrt(s[i] * z[i]);
        }
      } else if (b.kind == ConeKind::second_order) {
        const auto sb = s.segment(b.offset, b.dim);
        const auto zb = z.segment(b.offset, b.dim);
        const double s_res = soc_residual(sb);
        const double z_res = soc_residual(zb);
        const double s_scale = std::sqrt(std::max(s_res, 1e-300));
        const double z_scale = std::sqrt(std::max(z_res, 1e-300));
        const double dot = sb.dot(zb) / (s_scale * z_scale);
        const double gamma = std::sqrt(std::max((1.0 + dot) / 2.0, 1e-300));
        auto wb = w_.segment(b.offset, b.dim);
        wb[0] = (sb[0] / s_scale + zb[0] / z_scale) / (2.0 * gamma);
        wb.tail(b.dim - 1) = (sb.tail(b.dim - 1) / s_scale - zb.tail(b.dim - 1) / z_scale) / (2.0 * gamma);
        // renormalize so that w'Jw = 1 holds to machine precision
        const double wres = soc_residual(wb);
        if (wres > 0) wb /= std::sqrt(wres);
        eta_[c] = std::pow(std::max(s_res, 1e-300) / std::max(z_res, 1e-300), 0.25);
        Vec lz = zb;
        apply_w_block(c, lz, false);
        lambda_.segment(b.offset, b.dim) = lz;
      }
    }
  }

  const Vec& lambda() const noexcept { return lambda_; }
  /// Normalized scaling point (w'Jw = 1 on each cone) and cone scale eta.
  const Vec& scaling_point() const noexcept { return w_; }
  double eta(std::size_t cone) const { return eta_[cone]; }

  /// v <- W v (or W^{-1} v) on non-zero cones; zero-cone entries are zeroed.
  void apply_w(Vec& v, bool inverse) const {
    for (std::size_t c = 0; c < blocks_.size(); ++c) {
      const auto& b = blocks_[c];
      if (b.kind == ConeKind::zero) {
        v.segment(b.offset, b.dim).setZero();
      } else if (b.kind == ConeKind::nonnegative) {
        if (inverse)
          v.segment(b.offset, b.dim).array() /= w_.segment(b.offset, b.dim).array();
        else
          v.segment(b.offset, b.dim).array() *= w_.segment(b.offset, b.dim).array();
      } else {
        Vec blk = v.segment(b.offset, b.dim);
        apply_w_block(c, blk, inverse);
        v.segment(b.offset, b.dim) = blk;
      }
    }
  }

  /// out <- H v with H = W'W (zero on the zero cone).
  void apply_h(const Vec& v, Vec& out) const {
    for (std::size_t c = 0; c < blocks_.size(); ++c) {
      const auto& b = blocks_[c];
      if (b.kind == ConeKind::zero) {
        out.segment(b.offset, b.dim).setZero();
      } else if (b.kind == ConeKind::nonnegative) {
        out.segment(b.offset, b.dim) =
            w_.segment(b.offset, b.dim).array().square() * v.segment(b.offset, b.dim).array();
      } else {
        const auto wb = w_.segment(b.offset, b.dim);
        const auto vb = v.segment(b.offset, b.dim);
        const double e2 = eta_[c] * eta_[c];
        const double wv = wb.dot(vb);
        Vec r = 2.0 * wv * wb;
        r[0] -= vb[0];
        r.tail(b.dim - 1) += vb.tail(b.dim - 1);
        out.segment(b.offset, b.dim) = e2 * r;
      }
    }
  }

  /// Dense H block entry (row, col local to a second-order cone).
  double h_entry(std::size_t cone, int row, int col) const {
    const auto& b = blocks_[cone];
    const double e2 = eta_[cone] * eta_[cone];
    const double w_r = w_[b.offset + row], w_c = w_[b.offset + col];
    double v = 2.0 * w_r * w_c;
    if (row == col) v += (row == 0 ? -1.0 : 1.0);
    return e2 * v;
  }
  double h_diag_linear(int index) const { return w_[index] * w_[index]; }

  /// Jordan product u o v.
  Vec circ(const Vec& u, const Vec& v) const {
    Vec out = Vec::Zero(dim_);
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        out.segment(b.offset, b.dim) = u.segment(b.offset, b.dim).array() * v.segment(b.offset, b.dim).array();
      } else if (b.kind == ConeKind::second_order) {
        const auto ub = u.segment(b.offset, b.dim);
        const auto vb = v.segment(b.offset, b.dim);
        out[b.offset] = ub.dot(vb);
        out.segment(b.offset + 1, b.dim - 1) = ub[0] * vb.tail(b.dim - 1) + vb[0] * ub.tail(b.dim - 1);
      }
    }
    return out;
  }

  /// Solves lambda o y = d for y.
  Vec inverse_circ(const Vec& lam, const Vec& d) const {
    Vec y = Vec::Zero(dim_);
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        y.segment(b.offset, b.dim) = d.segment(b.offset, b.dim).array() / lam.segment(b.offset, b.dim).array();
      } else if (b.kind == ConeKind::second_order) {
        const auto l = lam.segment(b.offset, b.dim);
        const auto db = d.segment(b.offset, b.dim);
        const double rho = soc_residual(l);
        const double l1d1 = l.tail(b.dim - 1).dot(db.tail(b.dim - 1));
        const double y0 = (l[0] * db[0] - l1d1) / rho;
        y[b.offset] = y0;
        y.segment(b.offset + 1, b.dim - 1) = (db.tail(b.dim - 1) - y0 * l.tail(b.dim - 1)) / l[0];
      }
    }
    return y;
  }

  /// Largest alpha in [0, cap] keeping v + alpha * dv in the cone.
  double max_step(const Vec& v, const Vec& dv, double cap) const {
    double alpha = cap;
    for (const auto& b : blocks_) {
      if (b.kind == ConeKind::nonnegative) {
        for (int i = b.offset; i < b.offset + b.dim; ++i)
          if (dv[i] < 0) alpha = std::min(alpha, -v[i] / dv[i]);
      } else if (b.kind == ConeKind::second_order) {
        alpha = std::min(alpha, soc_step(v.segment(b.offset, b.dim), dv.segment(b.offset, b.dim)));
      }
    }
    return std::max(alpha, 0.0);
  }

  static double soc_residual(const Eigen::Ref<const Vec>& v) {
    return v[0] * v[0] - v.tail(v.size() - 1).squaredNorm();
  }

private:
  void apply_w_block(std::size_t c, Vec& v, bool inverse) const {
    const auto& b = blocks_[c];
    const auto wb = w_.segment(b.offset, b.dim);
    const double w0 = wb[0];
    const auto w1 = wb.tail(b.dim - 1);
    const double v0 = v[0];
    const double w1v1 = w1.dot(v.tail(b.dim - 1));
    const double eta = inverse ? 1.0 / eta_[c] : eta_[c];
    const double sign = inverse ? -1.0 : 1.0;
    const double head = w0 * v0 + sign * w1v1;
    const double coef = sign * v0 + w1v1 / (1.0 + w0);
    v.tail(b.dim - 1) += coef * w1;
    v[0] = head;
    v *= eta;
  }

  static double soc_step(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& d) {
    const int n = static_cast<int>(x.size());
    const double a = d[0] * d[0] - d.tail(n - 1).squaredNorm();
    const double b = 2.0 * (x[0] * d[0] - x.tail(n - 1).dot(d.tail(n - 1)));
    const double c = std::max(soc_residual(x), 0.0);
    const double inf = std::numeric_limits<double>::infinity();
    double best = inf;
    if (std::abs(a) < 1e-300) {
      if (b < 0) best = -c / b;
    } else {
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0) {
        const double sq = std::sqrt(disc);
        const double q = -0.5 * (b + (b >= 0 ? sq : -sq));
        const double r1 = q / a;
        const double r2 = q != 0.0 ? c / q : inf;
        if (r1 > 0) best = std::min(best, r1);
        if (r2 > 0) best = std::min(best, r2);
      }
    }
    if (d[0] < 0) best = std::min(best, -x[0] / d[0]);
    return best;
  }

  std::vector<ConeBlock> blocks_;
  int dim_ = 0;
  int degree_ = 0;
  Vec w_;
  Vec lambda_;
  std::vector<double> eta_;
};

}  // namespace ccopf::solver
