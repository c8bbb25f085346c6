#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "hpdssm/tensor.hpp"

namespace hpdssm {

namespace detail {

inline void require_same_inner(std::size_t lhs, std::size_t rhs, const char* op) {
  if (lhs != rhs) {
    throw ShapeError(std::string(op) + ": inner dimensions differ (" + std::to_string(lhs) +
                     " vs " + std::to_string(rhs) + ")");
  }
}

}  // namespace detail

/// a (m x k) times b (k x n). Every output entry accumulates over k in
/// increasing order, so results are reproducible bit for bit.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  detail::require_same_inner(k, b.rows(), "matmul");
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto out = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      auto brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) out[j] += aip * brow[j];
    }
  }
  return c;
}

/// a (m x k) times the transpose of b (n x k): the dense-layer product
/// x * W^T with W stored out x in.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  detail::require_same_inner(k, b.cols(), "matmul_nt");
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  return c;
}

/// W (m x n) times vector x (n).
inline Tensor matvec(const Tensor& w, const Tensor& x) {
  const std::size_t m = w.rows(), n = w.cols();
  detail::require_same_inner(n, x.size(), "matvec");
  Tensor y({m});
  for (std::size_t i = 0; i < m; ++i) {
    auto wrow = w.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

inline double frobenius_norm(const Tensor& a) {
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0, ssq = 1.0;
  for (double v : a.data()) {
    if (v == 0.0) continue;
    const double av = std::abs(v);
    if (scale < av) {
      ssq = 1.0 + ssq * (scale / av) * (scale / av);
      scale = av;
    } else {
      ssq += (av / scale) * (av / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw ShapeError("subtract: shape mismatch");
  Tensor c(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
  return c;
}

}  // namespace hpdssm
