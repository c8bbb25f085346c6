#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hpdssm/linalg.hpp"
#include "hpdssm/tensor.hpp"

namespace hpdssm {

/// Thin SVD: w = u * diag(s) * vt with u m x r, s r, vt r x n, r = min(m, n).
struct SvdResult {
  Tensor u;
  Tensor s;
  Tensor vt;

  std::size_t rank() const { return s.size(); }
};

struct SvdOptions {
  double tolerance = 1e-12;
  int max_sweeps = 60;
};

namespace detail {

// Column-major working copy, one contiguous buffer per column.
using Columns = std::vector<std::vector<double>>;

inline void rotate_columns(std::vector<double>& p, std::vector<double>& q, double c, double s) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double xp = p[i], xq = q[i];
    p[i] = c * xp - s * xq;
    q[i] = s * xp + c * xq;
  }
}

inline double column_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Extends `basis` (orthonormal columns of length m, fewer than m of them)
// with a unit vector orthogonal to all of them. The candidate is the
// standard basis vector with the largest residual after projection; that
// residual is at least 1/sqrt(m).
inline std::vector<double> complete_basis(const Columns& basis, std::size_t m) {
  auto project_out = [&](std::vector<double>& v) {
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double proj = column_dot(b, v);
        for (std::size_t i = 0; i < m; ++i) v[i] -= proj * b[i];
      }
    }
  };
  std::vector<double> best;
  double best_norm = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<double> v(m, 0.0);
    v[k] = 1.0;
    project_out(v);
    const double norm = std::sqrt(column_dot(v, v));
    if (norm > best_norm) {
      best_norm = norm;
      best = std::move(v);
    }
  }
  if (!(best_norm > 0.0)) throw NumericError("svd: unable to complete orthonormal basis");
  for (double& x : best) x /= best_norm;
  project_out(best);
  const double norm = std::sqrt(column_dot(best, best));
  for (double& x : best) x /= norm;
  return best;
}

}  // namespace detail

/// One-sided (Hestenes) Jacobi SVD. The matrix is transposed first when it
/// has fewer rows than columns so that rotations act on the short side.
/// Singular values come back nonincreasing; equal values keep their Jacobi
/// order. Columns of u belonging to numerically null singular values are
/// completed to an orthonormal set.
inline SvdResult svd(const Tensor& w, const SvdOptions& options = {}) {
  if (w.rank() != 2) throw ShapeError("svd: expected a matrix, got " + dims_to_string(w.dims()));
  if (!w.all_finite()) throw DomainError("svd: matrix has non-finite entries");

  const bool transposed = w.rows() < w.cols();
  const Tensor src = transposed ? transpose(w) : w;
  const std::size_t m = src.rows(), n = src.cols();

  detail::Columns cols(n, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) cols[j][i] = src(i, j);
  detail::Columns vcols(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) vcols[j][j] = 1.0;

  const double fro = frobenius_norm(src);
  const double null_norm = static_cast<double>(m) * std::numeric_limits<double>::epsilon() * fro;
  const double null_sq = null_norm * null_norm;

  bool converged = false;
  double off = 0.0;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = detail::column_dot(cols[p], cols[p]);
        const double beta = detail::column_dot(cols[q], cols[q]);
        if (alpha <= null_sq || beta <= null_sq) continue;
        const double gamma = detail::column_dot(cols[p], cols[q]);
        const double ratio = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, ratio);
        if (ratio <= options.tolerance) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        detail::rotate_columns(cols[p], cols[q], c, s);
        detail::rotate_columns(vcols[p], vcols[q], c, s);
      }
    }
    converged = off <= options.tolerance;
  }
  if (!converged) {
    throw NumericError("svd: no convergence after " + std::to_string(options.max_sweeps) +
                           " sweeps (off-diagonal ratio " + std::to_string(off) + ")",
                       off);
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(detail::column_dot(cols[j], cols[j]));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  // Left vectors in sorted order; null directions completed afterwards.
  detail::Columns left(n);
  std::vector<bool> null_dir(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    if (sigma[j] <= null_norm) {
      null_dir[k] = true;
      continue;
    }
    left[k] = cols[j];
    for (double& x : left[k]) x /= sigma[j];
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!null_dir[k]) continue;
    detail::Columns basis;
    for (std::size_t i = 0; i < n; ++i)
      if (!left[i].empty()) basis.push_back(left[i]);
    left[k] = detail::complete_basis(basis, m);
  }

  // src = L diag(sigma) R^T with L m x n and R n x n.
  Tensor lmat({m, n}), rmat_t({n, n}), s({n});
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    s[k] = sigma[j];
    for (std::size_t i = 0; i < m; ++i) lmat(i, k) = left[k][i];
    for (std::size_t i = 0; i < n; ++i) rmat_t(k, i) = vcols[j][i];
  }

  if (!transposed) return {std::move(lmat), std::move(s), std::move(rmat_t)};
  // w = src^T = R diag(sigma) L^T.
  return {transpose(rmat_t), std::move(s), transpose(lmat)};
}

/// u * diag(s) * vt.
inline Tensor reconstruct(const SvdResult& f) {
  Tensor us = f.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= f.s[k];
  return matmul(us, f.vt);
}

}  // namespace hpdssm
