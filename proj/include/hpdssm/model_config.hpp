#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "hpdssm/error.hpp"

namespace hpdssm {

/// Architecture hyperparameters of a Mamba-style model.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::size_t dt_rank = 4;
  std::size_t vocab_size = 1024;

  std::size_t d_inner() const { return expand * d_model; }

  void validate() const {
    auto require = [](std::size_t v, const char* field) {
      if (v < 1) throw ConfigError(std::string("model config: ") + field + " must be >= 1");
    };
    require(d_model, "d_model");
    require(n_layers, "n_layers");
    require(d_state, "d_state");
    require(d_conv, "d_conv");
    require(expand, "expand");
    require(dt_rank, "dt_rank");
    require(vocab_size, "vocab_size");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr const char* kConfigFields[] = {"d_model", "n_layers", "d_state", "d_conv",
                                                "expand",  "dt_rank",  "vocab_size"};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"d_state", c.d_state},
          {"d_conv", c.d_conv},   {"expand", c.expand},     {"dt_rank", c.dt_rank},
          {"vocab_size", c.vocab_size}};
}

}  // namespace hpdssm
