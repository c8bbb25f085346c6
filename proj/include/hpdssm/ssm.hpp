#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hpdssm/error.hpp"
#include "hpdssm/tensor.hpp"

namespace hpdssm {

struct Discretized {
  double a_bar;
  double b_bar;
};

/// Zero-order-hold discretization of a scalar (diagonal) system:
/// a_bar = exp(a*delta), b_bar = (exp(a*delta) - 1) / a * b.
inline Discretized discretize_zoh(double a, double b, double delta) {
  if (!(delta > 0.0)) throw DomainError("discretize_zoh: delta must be > 0");
  const double ad = a * delta;
  const double a_bar = std::exp(ad);
  if (std::abs(ad) < 1e-8) return {a_bar, delta * b * (1.0 + 0.5 * ad)};
  return {a_bar, std::expm1(ad) / a * b};
}

/// Diagonal discrete LTI system with N states and scalar input/output.
struct DiagonalLti {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> c;
  double d = 0.0;

  std::size_t states() const { return a_bar.size(); }
};

/// Convolution kernel taps k[j] = C * A_bar^j * B_bar plus the D feedthrough.
struct LtiKernel {
  Tensor taps;
  double feedthrough = 0.0;
};

inline LtiKernel lti_kernel(const DiagonalLti& sys, std::size_t length) {
  if (length < 1) throw DomainError("lti_kernel: length must be >= 1");
  const std::size_t n = sys.states();
  if (sys.b_bar.size() != n || sys.c.size() != n) throw ShapeError("lti_kernel: state sizes differ");
  Tensor taps({length});
  std::vector<double> power(n, 1.0);  // A_bar^j, per state
  for (std::size_t j = 0; j < length; ++j) {
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s) acc += sys.c[s] * power[s] * sys.b_bar[s];
    taps[j] = acc;
    for (std::size_t s = 0; s < n; ++s) power[s] *= sys.a_bar[s];
  }
  return {std::move(taps), sys.d};
}

/// Direct O(L^2) causal convolution y = x * K (+ D x).
inline Tensor lti_conv(const LtiKernel& kernel, const Tensor& x) {
  const std::size_t length = x.size();
  if (kernel.taps.size() < length) throw ShapeError("lti_conv: kernel shorter than input");
  Tensor y({length});
  for (std::size_t t = 0; t < length; ++t) {
    double acc = kernel.feedthrough * x[t];
    for (std::size_t j = 0; j <= t; ++j) acc += kernel.taps[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

/// Steps h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t + D x_t from h_0 = 0.
inline Tensor lti_recurrence(const DiagonalLti& sys, const Tensor& x) {
  const std::size_t n = sys.states();
  std::vector<double> h(n, 0.0);
  Tensor y({x.size()});
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = sys.d * x[t];
    for (std::size_t s = 0; s < n; ++s) {
      h[s] = sys.a_bar[s] * h[s] + sys.b_bar[s] * x[t];
      acc += sys.c[s] * h[s];
    }
    y[t] = acc;
  }
  return y;
}

inline constexpr double kMinDelta = 1e-12;

/// Input-dependent SSM parameters for one sequence of length L.
struct SsmParams {
  Tensor a;      // d_inner x d_state, negative
  Tensor b;      // L x d_state
  Tensor c;      // L x d_state
  Tensor d;      // d_inner
  Tensor delta;  // L x d_inner, positive
};

/// Selective scan with the Euler input rule used by the reference Mamba
/// kernels:
///   h_t = exp(delta_t * A) . h_{t-1} + (delta_t * B_t) . x_t
///   y_t = <C_t, h_t> + D . x_t
/// Delta is clamped below at kMinDelta. Sequential over time.
inline Tensor selective_scan(const SsmParams& p, const Tensor& x) {
  const std::size_t length = x.rows(), channels = x.cols();
  const std::size_t states = p.a.cols();
  if (p.a.rows() != channels || p.d.size() != channels || p.delta.rows() != length ||
      p.delta.cols() != channels || p.b.rows() != length || p.c.rows() != length ||
      p.b.cols() != states || p.c.cols() != states) {
    throw ShapeError("selective_scan: parameter shapes do not match input " +
                     dims_to_string(x.dims()));
  }
  Tensor h({channels, states});
  Tensor y({length, channels});
  for (std::size_t t = 0; t < length; ++t) {
    auto bt = p.b.row(t);
    auto ct = p.c.row(t);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double dt = p.delta(t, ch);
      if (dt < 0.0 || std::isnan(dt)) {
        throw DomainError("selective_scan: negative delta at timestep " + std::to_string(t));
      }
      if (dt < kMinDelta) dt = kMinDelta;
      const double xt = x(t, ch);
      auto hrow = h.row(ch);
      auto arow = p.a.row(ch);
      double acc = 0.0;
      for (std::size_t s = 0; s < states; ++s) {
        hrow[s] = std::exp(dt * arow[s]) * hrow[s] + dt * bt[s] * xt;
        acc += ct[s] * hrow[s];
      }
      y(t, ch) = acc + p.d[ch] * xt;
    }
    for (double v : y.row(t)) {
      if (!std::isfinite(v)) {
        throw NumericError("selective_scan: non-finite output at timestep " + std::to_string(t));
      }
    }
  }
  return y;
}

}  // namespace hpdssm
