#pragma once

// Sparse LDL^T factorization for symmetric quasi-definite matrices.
//
// Multifrontal supernodal elimination on an AMD ordering (postordered), with
// dense Eigen kernels inside each front and dynamic pivot regularization: a
// pivot whose sign disagrees with the expected inertia (or is too small) is
// replaced by sign * delta.

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ccopf/errors.hpp"

namespace ccopf::linalg {

class SparseLdl {
public:
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

  /// Symbolic analysis. `upper` holds the upper triangle (diagonal included)
  /// in compressed column form; `signs` gives the expected sign of each pivot
  /// in the original ordering. The sparsity pattern must stay fixed for all
  /// later calls to factorize(). Each pair (a, b) in `before` forces a to be
  /// eliminated before b; the two must have the same sparsity pattern, since
  /// the constraint is met by swapping their positions.
  void analyze(const SparseMatrix& upper, std::vector<int> signs,
               const std::vector<std::pair<int, int>>& before = {}) {
    if (upper.rows() != upper.cols() || !upper.isCompressed())
      throw ArgumentError("SparseLdl::analyze expects a compressed square matrix");
    n_ = static_cast<int>(upper.rows());
    if (static_cast<int>(signs.size()) != n_) throw ArgumentError("SparseLdl: sign vector size mismatch");

    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
    Eigen::AMDOrdering<int> amd;
    amd(upper, pinv);
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p = pinv.inverse();
    new_index_.assign(p.indices().data(), p.indices().data() + n_);

    // postorder the elimination tree so that supernodes are contiguous
    permute_pattern(upper);
    elimination_tree();
    const std::vector<int> post = postorder();
    std::vector<int> position(n_);
    for (int k = 0; k < n_; ++k) position[post[k]] = k;
    for (int i = 0; i < n_; ++i) new_index_[i] = position[new_index_[i]];
    for (const auto& [a, b] : before)
      if (new_index_[a] > new_index_[b]) std::swap(new_index_[a], new_index_[b]);
    permute_pattern(upper);
    elimination_tree();

    signs_.resize(n_);
    for (int i = 0; i < n_; ++i) signs_[new_index_[i]] = signs[i] >= 0 ? 1 : -1;

    find_supernodes();
    row_structures();
    d_.assign(n_, 0.0);
    analyzed_ = true;
  }

  /// Numeric factorization. Values are read from `upper`, which must share
  /// the pattern given to analyze().
  void factorize(const SparseMatrix& upper, double dyn_eps = 1e-13, double dyn_delta = 2e-7) {
    if (!analyzed_) throw ArgumentError("SparseLdl::factorize before analyze");
    const double* vals = upper.valuePtr();
    for (std::size_t q = 0; q < map_.size(); ++q) lx_low_[map_[q]] = vals[q];
    regularized_ = 0;

    const int ns = static_cast<int>(sn_start_.size()) - 1;
    std::vector<Eigen::MatrixXd> update(ns);
    std::vector<int> pos(n_, -1);
    Eigen::MatrixXd F;
    for (int s = 0; s < ns; ++s) {
      const int f = sn_start_[s], ncol = sn_start_[s + 1] - f;
      const auto& R = rows_[s];
      const int nr = static_cast<int>(R.size()), nf = ncol + nr;
      for (int c = 0; c < ncol; ++c) pos[f + c] = c;
      for (int a = 0; a < nr; ++a) pos[R[a]] = ncol + a;

      F.setZero(nf, nf);
      for (int j = f; j < f + ncol; ++j)
        for (int q = lp_low_[j]; q < lp_low_[j + 1]; ++q) F(pos[li_low_[q]], j - f) += lx_low_[q];
      for (int c : children_[s]) {
        const auto& Rc = rows_[c];
        const Eigen::MatrixXd& U = update[c];
        const int m = static_cast<int>(Rc.size());
        for (int b = 0; b < m; ++b) {
          const int pb = pos[Rc[b]];
          for (int a = b; a < m; ++a) F(pos[Rc[a]], pb) += U(a, b);
        }
        update[c].resize(0, 0);
      }

      factor_front(F, ncol, f, dyn_eps, dyn_delta);
      L_[s] = F.leftCols(ncol);
      if (nr > 0) update[s] = F.bottomRightCorner(nr, nr);
    }
  }

  /// Solves K x = b in place.
  void solve(Eigen::Ref<Eigen::VectorXd> b) const {
    Eigen::VectorXd x(n_);
    for (int i = 0; i < n_; ++i) x[new_index_[i]] = b[i];
    const int ns = static_cast<int>(sn_start_.size()) - 1;
    Eigen::VectorXd tmp;
    for (int s = 0; s < ns; ++s) {
      const int f = sn_start_[s], ncol = sn_start_[s + 1] - f;
      const auto& R = rows_[s];
      const int nr = static_cast<int>(R.size());
      auto xs = x.segment(f, ncol);
      L_[s].topRows(ncol).triangularView<Eigen::UnitLower>().solveInPlace(xs);
      if (nr > 0) {
        tmp.noalias() = L_[s].bottomRows(nr) * xs;
        for (int a = 0; a < nr; ++a) x[R[a]] -= tmp[a];
      }
    }
    for (int j = 0; j < n_; ++j) x[j] /= d_[j];
    for (int s = ns - 1; s >= 0; --s) {
      const int f = sn_start_[s], ncol = sn_start_[s + 1] - f;
      const auto& R = rows_[s];
      const int nr = static_cast<int>(R.size());
      auto xs = x.segment(f, ncol);
      if (nr > 0) {
        tmp.resize(nr);
        for (int a = 0; a < nr; ++a) tmp[a] = x[R[a]];
        xs.noalias() -= L_[s].bottomRows(nr).transpose() * tmp;
      }
      L_[s].topRows(ncol).triangularView<Eigen::UnitLower>().transpose().solveInPlace(xs);
    }
    for (int i = 0; i < n_; ++i) b[i] = x[new_index_[i]];
  }

  int regularized_pivots() const noexcept { return regularized_; }
  int size() const noexcept { return n_; }

  /// Stored entries of L (dense supernodal blocks, diagonal included).
  std::size_t factor_nonzeros() const noexcept {
    std::size_t total = 0;
    for (std::size_t s = 0; s + 1 < sn_start_.size(); ++s) {
      const std::size_t ncol = sn_start_[s + 1] - sn_start_[s];
      total += ncol * (ncol + 1) / 2 + ncol * rows_[s].size();
    }
    return total;
  }

  /// Number of pivots with positive sign (inertia check).
  int positive_pivots() const {
    return static_cast<int>(std::count_if(d_.begin(), d_.end(), [](double v) { return v > 0; }));
  }

private:
  // Right-looking blocked LDL^T of the first ncol columns of the front; the
  // trailing block ends up holding the update matrix for the parent.
  void factor_front(Eigen::MatrixXd& F, int ncol, int first, double eps, double delta) {
    constexpr int block = 48;
    const int nf = static_cast<int>(F.rows());
    for (int k0 = 0; k0 < ncol; k0 += block) {
      const int k1 = std::min(k0 + block, ncol);
      for (int k = k0; k < k1; ++k) {
        double dk = F(k, k);
        const int sg = signs_[first + k];
        if (sg * dk <= eps) {
          dk = sg * delta;
          ++regularized_;
        }
        d_[first + k] = dk;
        for (int j = k + 1; j < k1; ++j) {
          const double scale = F(j, k) / dk;
          if (scale != 0.0) F.col(j).tail(nf - j).noalias() -= scale * F.col(k).tail(nf - j);
        }
        F.col(k).tail(nf - k - 1) /= dk;
      }
      const int rest = nf - k1;
      if (rest > 0) {
        const auto Lp = F.block(k1, k0, rest, k1 - k0);
        const Eigen::MatrixXd Wp =
            Lp * Eigen::Map<const Eigen::VectorXd>(d_.data() + first + k0, k1 - k0).asDiagonal();
        F.bottomRightCorner(rest, rest).triangularView<Eigen::Lower>() -= Lp * Wp.transpose();
      }
    }
  }

  // Permuted pattern: lower CSC (rows >= column) plus a value map from the
  // caller's upper storage. Also keeps the permuted upper CSC for the etree.
  void permute_pattern(const SparseMatrix& upper) {
    const int nnz = static_cast<int>(upper.nonZeros());
    const int* op = upper.outerIndexPtr();
    const int* oi = upper.innerIndexPtr();
    std::vector<int> lo(nnz), hi(nnz);
    for (int j = 0; j < n_; ++j) {
      for (int p = op[j]; p < op[j + 1]; ++p) {
        const int i = oi[p];
        if (i > j) throw ArgumentError("SparseLdl expects upper-triangular input");
        const int a = new_index_[i], b = new_index_[j];
        lo[p] = std::min(a, b);
        hi[p] = std::max(a, b);
      }
    }
    auto build = [&](const std::vector<int>& col, const std::vector<int>& row, std::vector<int>& cp,
                     std::vector<int>& ri, std::vector<int>* map) {
      std::vector<int> order(nnz);
      for (int p = 0; p < nnz; ++p) order[p] = p;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return col[a] != col[b] ? col[a] < col[b] : row[a] < row[b]; });
      cp.assign(n_ + 1, 0);
      for (int p = 0; p < nnz; ++p) ++cp[col[p] + 1];
      for (int j = 0; j < n_; ++j) cp[j + 1] += cp[j];
      ri.assign(nnz, 0);
      if (map) map->assign(nnz, 0);
      for (int q = 0; q < nnz; ++q) {
        ri[q] = row[order[q]];
        if (map) (*map)[order[q]] = q;
      }
    };
    build(hi, lo, ap_, ai_, nullptr);
    build(lo, hi, lp_low_, li_low_, &map_);
    lx_low_.assign(nnz, 0.0);
  }

  void elimination_tree() {
    std::vector<int> work(n_, -1);
    etree_.assign(n_, -1);
    lnz_.assign(n_, 0);
    for (int j = 0; j < n_; ++j) {
      work[j] = j;
      for (int p = ap_[j]; p < ap_[j + 1]; ++p) {
        int i = ai_[p];
        while (work[i] != j) {
          if (etree_[i] == -1) etree_[i] = j;
          ++lnz_[i];
          work[i] = j;
          i = etree_[i];
        }
      }
    }
  }

  std::vector<int> postorder() const {
    std::vector<int> head(n_, -1), next(n_, -1), out, stack;
    out.reserve(n_);
    for (int j = n_ - 1; j >= 0; --j) {
      if (etree_[j] == -1) continue;
      next[j] = head[etree_[j]];
      head[etree_[j]] = j;
    }
    for (int root = 0; root < n_; ++root) {
      if (etree_[root] != -1) continue;
      stack.push_back(root);
      while (!stack.empty()) {
        const int top = stack.back();
        const int child = head[top];
        if (child == -1) {
          stack.pop_back();
          out.push_back(top);
        } else {
          head[top] = next[child];
          stack.push_back(child);
        }
      }
    }
    return out;
  }

  // Chains j -> j+1 in the etree merge into one supernode when the column
  // counts nest exactly, or when only a few explicit zeros are added to a
  // narrow supernode.
  void find_supernodes() {
    sn_start_.assign(1, 0);
    int width = 1;
    for (int j = 0; j + 1 < n_; ++j) {
      const bool chain = etree_[j] == j + 1;
      const int extra = lnz_[j + 1] + 1 - lnz_[j];
      const bool merge = chain && (extra == 0 || (width < 16 && extra <= 8));
      if (merge) {
        ++width;
      } else {
        sn_start_.push_back(j + 1);
        width = 1;
      }
    }
    if (n_ > 0) sn_start_.push_back(n_);
    const int ns = static_cast<int>(sn_start_.size()) - 1;
    sn_of_.assign(n_, 0);
    for (int s = 0; s < ns; ++s)
      for (int j = sn_start_[s]; j < sn_start_[s + 1]; ++j) sn_of_[j] = s;
    children_.assign(ns, {});
    for (int s = 0; s < ns; ++s) {
      const int parent = etree_[sn_start_[s + 1] - 1];
      if (parent != -1) children_[sn_of_[parent]].push_back(s);
    }
    L_.assign(ns, Eigen::MatrixXd());
  }

  // Off-diagonal row structure of each supernode: its own entries below the
  // pivot block plus the children's structures, restricted to later rows.
  void row_structures() {
    const int ns = static_cast<int>(sn_start_.size()) - 1;
    rows_.assign(ns, {});
    std::vector<int> mark(n_, -1);
    for (int s = 0; s < ns; ++s) {
      const int f = sn_start_[s], l = sn_start_[s + 1] - 1;
      auto& R = rows_[s];
      auto add = [&](int i) {
        if (i > l && mark[i] != s) {
          mark[i] = s;
          R.push_back(i);
        }
      };
      for (int j = f; j <= l; ++j)
        for (int q = lp_low_[j]; q < lp_low_[j + 1]; ++q) add(li_low_[q]);
      for (int c : children_[s])
        for (int i : rows_[c]) add(i);
      std::sort(R.begin(), R.end());
    }
  }

  int n_ = 0;
  bool analyzed_ = false;
  int regularized_ = 0;
  std::vector<int> new_index_;
  std::vector<int> signs_;
  std::vector<int> ap_, ai_;
  std::vector<int> lp_low_, li_low_, map_;
  std::vector<double> lx_low_;
  std::vector<int> etree_, lnz_;
  std::vector<int> sn_start_, sn_of_;
  std::vector<std::vector<int>> children_, rows_;
  std::vector<Eigen::MatrixXd> L_;
  std::vector<double> d_;
};

}  // namespace ccopf::linalg
