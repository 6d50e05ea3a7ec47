#pragma once

#include <Eigen/Dense>

#include <vector>

#include "ccopf/errors.hpp"

namespace ccopf {

/// Square lower-triangular matrix stored packed by rows:
/// entry (t, k), k <= t, lives at t(t+1)/2 + k (0-based).
class LowerTriangular {
public:
  LowerTriangular() = default;
  explicit LowerTriangular(int n) : n_(n), data_(static_cast<std::size_t>(packed_size(n)), 0.0) {}

  static constexpr int packed_size(int n) noexcept { return n * (n + 1) / 2; }
  static constexpr int index(int t, int k) noexcept { return t * (t + 1) / 2 + k; }

  /// Reads the lower triangle of `m`; entries above the diagonal must be zero.
  static LowerTriangular from_dense(const Eigen::MatrixXd& m, double tol = 0.0) {
    if (m.rows() != m.cols()) throw ArgumentError("lower-triangular matrix must be square");
    const int n = static_cast<int>(m.rows());
    LowerTriangular out(n);
    for (int t = 0; t < n; ++t)
      for (int k = 0; k < n; ++k) {
        if (k <= t)
          out(t, k) = m(t, k);
        else if (std::abs(m(t, k)) > tol)
          throw ArgumentError("matrix is not lower-triangular");
      }
    return out;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, n_);
    for (int t = 0; t < n_; ++t)
      for (int k = 0; k <= t; ++k) m(t, k) = (*this)(t, k);
    return m;
  }

  int size() const noexcept { return n_; }
  double& operator()(int t, int k) { return data_[static_cast<std::size_t>(index(t, k))]; }
  double operator()(int t, int k) const { return data_[static_cast<std::size_t>(index(t, k))]; }
  /// Value at (t, k), zero above the diagonal.
  double at(int t, int k) const { return k > t ? 0.0 : (*this)(t, k); }

  std::vector<double>& packed() noexcept { return data_; }
  const std::vector<double>& packed() const noexcept { return data_; }

  bool is_zero() const {
    for (double v : data_)
      if (v != 0.0) return false;
    return true;
  }

  bool operator==(const LowerTriangular&) const = default;

private:
  int n_ = 0;
  std::vector<double> data_;
};

}  // namespace ccopf
