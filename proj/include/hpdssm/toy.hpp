#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "hpdssm/checkpoint.hpp"
#include "hpdssm/corpus.hpp"
#include "hpdssm/rng.hpp"

namespace hpdssm {

namespace detail {

inline Tensor normal_tensor(std::uint64_t seed, const std::string& name, Dims dims, double scale) {
  const auto stream = RngStream::labelled(seed, "toy:" + name);
  Tensor t(std::move(dims));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * stream.normal_at(i);
  return t;
}

inline Tensor filled(Dims dims, double value) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = value;
  return t;
}

}  // namespace detail

/// Deterministic randomly initialized model. The initialization targets
/// stable dynamics, not task quality: projections are N(0, 1/fan_in),
/// A = -exp(A_log) with A_log[d, n] = ln(n + 1), and softplus(dt_proj.bias)
/// is log-spaced over [1e-3, 1e-1] across channels. Values are rounded to
/// the 32-bit storage precision so a save/load round trip is exact.
inline Checkpoint generate_toy(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  const std::size_t di = config.d_inner();
  auto put = [&](const std::string& name, Tensor t) {
    ckpt.tensors.emplace(name, round_to_storage(std::move(t)));
  };
  auto projection = [&](const std::string& name, std::size_t out, std::size_t in) {
    put(name, detail::normal_tensor(seed, name, {out, in}, 1.0 / std::sqrt(double(in))));
  };

  const double dt_min = 1e-3, dt_max = 1e-1;
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    projection(layer_tensor(i, "in_proj.weight"), 2 * di, config.d_model);
    const auto conv_name = layer_tensor(i, "conv1d.weight");
    put(conv_name, detail::normal_tensor(seed, conv_name, {di, config.d_conv},
                                         1.0 / std::sqrt(double(config.d_conv))));
    const auto conv_bias = layer_tensor(i, "conv1d.bias");
    put(conv_bias, detail::normal_tensor(seed, conv_bias, {di}, 0.02));
    projection(layer_tensor(i, "x_proj.weight"), config.dt_rank + 2 * config.d_state, di);
    projection(layer_tensor(i, "dt_proj.weight"), di, config.dt_rank);

    Tensor dt_bias({di});
    for (std::size_t d = 0; d < di; ++d) {
      const double frac = di == 1 ? 0.5 : double(d) / double(di - 1);
      const double dt = std::exp(std::log(dt_min) + frac * (std::log(dt_max) - std::log(dt_min)));
      dt_bias[d] = dt + std::log(-std::expm1(-dt));  // inverse softplus
    }
    put(layer_tensor(i, "dt_proj.bias"), std::move(dt_bias));

    Tensor a_log({di, config.d_state});
    for (std::size_t d = 0; d < di; ++d)
      for (std::size_t n = 0; n < config.d_state; ++n) a_log(d, n) = std::log(double(n + 1));
    put(layer_tensor(i, "A_log"), std::move(a_log));

    put(layer_tensor(i, "D"), detail::filled({di}, 1.0));
    projection(layer_tensor(i, "out_proj.weight"), config.d_model, di);
    put(layer_tensor(i, "norm.weight"), detail::filled({config.d_model}, 1.0));
  }
  put("embedding.weight", detail::normal_tensor(seed, "embedding.weight",
                                                {config.vocab_size, config.d_model}, 1.0));
  put("norm_f.weight", detail::filled({config.d_model}, 1.0));
  projection("lm_head.weight", config.vocab_size, config.d_model);

  ckpt.metadata["provenance"] = "toy";
  ckpt.metadata["toy.seed"] = std::to_string(seed);
  ckpt.metadata["tie_embeddings"] = "false";
  return ckpt;
}

/// Uniformly random token IDs.
inline TokenCorpus generate_corpus(std::uint32_t vocab_size, std::size_t length,
                                   std::uint64_t seed) {
  TokenCorpus corpus;
  corpus.vocab_size = vocab_size;
  corpus.tokens.resize(length);
  const auto stream = RngStream::labelled(seed, "corpus");
  for (std::size_t i = 0; i < length; ++i) {
    corpus.tokens[i] = static_cast<Token>(stream.uniform_at(i) * vocab_size);
  }
  corpus.validate();
  return corpus;
}

}  // namespace hpdssm
