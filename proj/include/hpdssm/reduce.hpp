#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "hpdssm/tensor.hpp"

namespace hpdssm {

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw DomainError("log_sum_exp of an empty vector");
  const double shift = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - shift);
  return shift + std::log(acc);
}

inline double log_sum_exp(const Tensor& v) { return log_sum_exp(v.data()); }

inline Tensor softmax(const Tensor& v) {
  if (v.empty()) throw DomainError("softmax of an empty vector");
  const double shift = *std::max_element(v.data().begin(), v.data().end());
  Tensor p(v.dims());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp(v[i] - shift);
    total += p[i];
  }
  for (double& x : p.data()) x /= total;
  return p;
}

/// log softmax of one row, written into `out`.
inline void log_softmax_into(std::span<const double> v, std::span<double> out) {
  const double lse = log_sum_exp(v);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace hpdssm
