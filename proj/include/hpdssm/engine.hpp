#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hpdssm/checkpoint.hpp"
#include "hpdssm/corpus.hpp"
#include "hpdssm/hpd.hpp"
#include "hpdssm/linalg.hpp"
#include "hpdssm/reduce.hpp"
#include "hpdssm/ssm.hpp"

namespace hpdssm {

inline constexpr double kRmsNormEps = 1e-5;

/// Row-wise RMS normalization with a learned per-feature scale.
inline Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = kRmsNormEps) {
  const std::size_t n = x.cols();
  if (weight.size() != n) throw ShapeError("rms_norm: weight length mismatch");
  Tensor y(x.dims());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto in = x.row(t);
    double ms = 0.0;
    for (double v : in) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / double(n) + eps);
    auto out = y.row(t);
    for (std::size_t j = 0; j < n; ++j) out[j] = in[j] * inv * weight[j];
  }
  return y;
}

/// Depthwise causal convolution: out[t, d] = bias[d] + sum_k w[d, k] x[t - K + 1 + k, d],
/// zero-padded on the left.
inline Tensor causal_depthwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t length = x.rows(), channels = x.cols(), width = weight.cols();
  if (weight.rows() != channels || bias.size() != channels) {
    throw ShapeError("causal_depthwise_conv: weight/bias shape mismatch");
  }
  Tensor y({length, channels});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t d = 0; d < channels; ++d) {
      double acc = bias[d];
      for (std::size_t k = 0; k < width; ++k) {
        const std::size_t back = width - 1 - k;
        if (back > t) continue;
        acc += weight(d, k) * x(t - back, d);
      }
      y(t, d) = acc;
    }
  }
  return y;
}

/// Dense projection x W^T for the named weight, dispatching to the two-stage
/// HPD product when that weight has been rewritten.
inline Tensor project(const Checkpoint& ckpt, const std::string& name, const Tensor& x) {
  if (const auto target = ckpt.hpd_target(); target && *target == name) {
    return hybrid_apply(ckpt.at(kHpdCimName), ckpt.at(kHpdDigitalName), x);
  }
  return matmul_nt(x, ckpt.at(name));
}

/// Columns [begin, begin + count) of a matrix.
inline Tensor column_slice(const Tensor& x, std::size_t begin, std::size_t count) {
  Tensor out({x.rows(), count});
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t j = 0; j < count; ++j) out(t, j) = x(t, begin + j);
  return out;
}

/// One residual Mamba block on u (L x d_model):
///   norm -> in_proj -> (x, z) -> conv + SiLU -> x_proj -> (dt, B, C)
///   -> delta = softplus(dt_proj(dt) + bias) -> selective scan
///   -> gate with SiLU(z) -> out_proj -> + u
inline Tensor mamba_block_forward(const Checkpoint& ckpt, std::size_t layer, const Tensor& u) {
  const ModelConfig& cfg = ckpt.config;
  const std::size_t di = cfg.d_inner(), length = u.rows();
  auto name = [&](const char* suffix) { return layer_tensor(layer, suffix); };

  const Tensor normed = rms_norm(u, ckpt.at(name("norm.weight")));
  const Tensor xz = project(ckpt, name("in_proj.weight"), normed);
  Tensor x = causal_depthwise_conv(column_slice(xz, 0, di), ckpt.at(name("conv1d.weight")),
                                   ckpt.at(name("conv1d.bias")));
  for (double& v : x.data()) v = silu(v);

  const Tensor x_dbl = project(ckpt, name("x_proj.weight"), x);
  SsmParams params;
  params.b = column_slice(x_dbl, cfg.dt_rank, cfg.d_state);
  params.c = column_slice(x_dbl, cfg.dt_rank + cfg.d_state, cfg.d_state);
  params.delta = project(ckpt, name("dt_proj.weight"), column_slice(x_dbl, 0, cfg.dt_rank));
  const Tensor& dt_bias = ckpt.at(name("dt_proj.bias"));
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t d = 0; d < di; ++d) params.delta(t, d) = softplus(params.delta(t, d) + dt_bias[d]);

  params.a = ckpt.at(name("A_log"));
  for (double& v : params.a.data()) v = -std::exp(v);
  params.d = ckpt.at(name("D"));

  Tensor y = selective_scan(params, x);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t d = 0; d < di; ++d) y(t, d) *= silu(xz(t, di + d));

  Tensor out = project(ckpt, name("out_proj.weight"), y);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += u[i];
  return out;
}

inline Tensor embed(const Checkpoint& ckpt, std::span<const Token> tokens) {
  const Tensor& table = ckpt.at("embedding.weight");
  const std::size_t dm = ckpt.config.d_model;
  Tensor h({tokens.size(), dm});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= ckpt.config.vocab_size) {
      throw DomainError("token " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                        " outside vocabulary of " + std::to_string(ckpt.config.vocab_size));
    }
    auto src = table.row(tokens[t]);
    std::copy(src.begin(), src.end(), h.row(t).begin());
  }
  return h;
}

/// Token logits (L x vocab_size).
inline Tensor model_forward(const Checkpoint& ckpt, std::span<const Token> tokens) {
  if (tokens.empty()) throw DomainError("model_forward: empty token sequence");
  Tensor h = embed(ckpt, tokens);
  for (std::size_t i = 0; i < ckpt.config.n_layers; ++i) h = mamba_block_forward(ckpt, i, h);
  return project(ckpt, "lm_head.weight", rms_norm(h, ckpt.at("norm_f.weight")));
}

/// Next-token negative log-likelihoods (natural log), length L - 1.
inline std::vector<double> nll(const Tensor& logits, std::span<const Token> tokens) {
  if (logits.rows() != tokens.size()) throw ShapeError("nll: logits rows != token count");
  std::vector<double> out;
  if (tokens.size() < 2) return out;
  out.reserve(tokens.size() - 1);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const Token next = tokens[t + 1];
    if (next >= logits.cols()) throw DomainError("nll: token outside vocabulary");
    out.push_back(log_sum_exp(logits.row(t)) - logits(t, next));
  }
  return out;
}

}  // namespace hpdssm
