#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hpdssm/checkpoint.hpp"
#include "hpdssm/linalg.hpp"
#include "hpdssm/rng.hpp"

namespace hpdssm {

enum class NoiseDistribution { gaussian, lognormal };
enum class NoiseMode { additive_range, additive_std, multiplicative };

inline const char* to_string(NoiseDistribution d) {
  return d == NoiseDistribution::gaussian ? "gaussian" : "lognormal";
}

inline const char* to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::additive_range: return "additive-range";
    case NoiseMode::additive_std: return "additive-std";
    case NoiseMode::multiplicative: return "multiplicative";
  }
  return "unknown";
}

inline NoiseDistribution parse_distribution(std::string_view s) {
  if (s == "gaussian") return NoiseDistribution::gaussian;
  if (s == "lognormal") return NoiseDistribution::lognormal;
  throw ConfigError("unknown noise distribution \"" + std::string(s) + "\"");
}

inline NoiseMode parse_mode(std::string_view s) {
  if (s == "additive-range") return NoiseMode::additive_range;
  if (s == "additive-std") return NoiseMode::additive_std;
  if (s == "multiplicative") return NoiseMode::multiplicative;
  throw ConfigError("unknown noise mode \"" + std::string(s) + "\"");
}

inline NoiseMode default_mode(NoiseDistribution d) {
  return d == NoiseDistribution::gaussian ? NoiseMode::additive_range : NoiseMode::multiplicative;
}

/// Static weight perturbation model. `sigma` is the noise standard
/// deviation; (seed, trial) select the realization.
struct NoiseSpec {
  NoiseDistribution distribution = NoiseDistribution::gaussian;
  NoiseMode mode = NoiseMode::additive_range;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t trial = 0;

  void validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
      throw ConfigError("noise sigma must be finite and >= 0");
    }
    if (distribution == NoiseDistribution::lognormal && mode != NoiseMode::multiplicative) {
      throw ConfigError(std::string("lognormal noise supports multiplicative mode only, got ") +
                        to_string(mode));
    }
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(distribution) << '/' << to_string(mode) << " sigma=" << sigma
       << " seed=" << seed << " trial=" << trial;
    return os.str();
  }
};

/// Noise stream of one named tensor in one trial.
inline RngStream noise_stream(const NoiseSpec& spec, std::string_view name) {
  return {derive_key(spec.seed, spec.trial), hash_label(name), 0};
}

inline double population_stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size()));
}

/// Perturbed copy of `w`. The realization depends only on (seed, trial, name).
///   gaussian additive-range: w + sigma * max|w| * eps
///   gaussian additive-std:   w + sigma * stddev(w) * eps
///   gaussian multiplicative: w * (1 + sigma * eps)
///   lognormal:               w * exp(sigma * eps)
inline Tensor perturb_tensor(const Tensor& w, std::string_view name, const NoiseSpec& spec) {
  spec.validate();
  Tensor out = w;
  if (spec.sigma == 0.0) return out;
  const RngStream stream = noise_stream(spec, name);
  const double s = spec.sigma;
  if (spec.distribution == NoiseDistribution::lognormal) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= std::exp(s * stream.normal_at(i));
    return out;
  }
  switch (spec.mode) {
    case NoiseMode::additive_range:
    case NoiseMode::additive_std: {
      const double scale = spec.mode == NoiseMode::additive_range ? max_abs(w.data())
                                                                  : population_stddev(w.data());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * scale * stream.normal_at(i);
      break;
    }
    case NoiseMode::multiplicative:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= 1.0 + s * stream.normal_at(i);
      break;
  }
  return out;
}

enum class LayerClass { A_log, conv1d, x_proj, dt_proj, in_proj, out_proj, lm_head, embedding, norm };

inline constexpr LayerClass kAllLayerClasses[] = {
    LayerClass::A_log,   LayerClass::conv1d,   LayerClass::x_proj,
    LayerClass::dt_proj, LayerClass::in_proj,  LayerClass::out_proj,
    LayerClass::lm_head, LayerClass::embedding, LayerClass::norm};

inline const char* to_string(LayerClass c) {
  switch (c) {
    case LayerClass::A_log: return "A_log";
    case LayerClass::conv1d: return "conv1d";
    case LayerClass::x_proj: return "x_proj";
    case LayerClass::dt_proj: return "dt_proj";
    case LayerClass::in_proj: return "in_proj";
    case LayerClass::out_proj: return "out_proj";
    case LayerClass::lm_head: return "lm_head";
    case LayerClass::embedding: return "embedding";
    case LayerClass::norm: return "norm";
  }
  return "unknown";
}

inline LayerClass parse_layer_class(std::string_view s) {
  for (LayerClass c : kAllLayerClasses)
    if (s == to_string(c)) return c;
  throw ConfigError("unknown layer class \"" + std::string(s) + "\"");
}

/// Class and block of a perturbable tensor. Global tensors (embedding,
/// norm_f, lm_head) have no block.
struct TensorRole {
  LayerClass layer_class;
  std::optional<std::size_t> block;
};

/// Role of a tensor name, or nullopt for tensors that never sit in an analog
/// array (biases, D, and the digital HPD stage).
inline std::optional<TensorRole> classify_tensor(const std::string& name,
                                                 const std::optional<std::string>& hpd_target) {
  if (name == kHpdDigitalName) return std::nullopt;
  if (name == kHpdCimName) {
    if (!hpd_target) return std::nullopt;
    return classify_tensor(*hpd_target, std::nullopt);
  }
  if (name == "embedding.weight") return TensorRole{LayerClass::embedding, std::nullopt};
  if (name == "lm_head.weight") return TensorRole{LayerClass::lm_head, std::nullopt};
  if (name == "norm_f.weight") return TensorRole{LayerClass::norm, std::nullopt};

  constexpr std::string_view prefix = "layers.";
  if (name.rfind(prefix, 0) != 0) return std::nullopt;
  const auto dot = name.find('.', prefix.size());
  if (dot == std::string::npos) return std::nullopt;
  std::size_t block = 0;
  try {
    block = std::stoul(name.substr(prefix.size(), dot - prefix.size()));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  const std::string suffix = name.substr(dot + 1);
  static const std::pair<const char*, LayerClass> kSuffixes[] = {
      {"in_proj.weight", LayerClass::in_proj},   {"conv1d.weight", LayerClass::conv1d},
      {"x_proj.weight", LayerClass::x_proj},     {"dt_proj.weight", LayerClass::dt_proj},
      {"A_log", LayerClass::A_log},              {"out_proj.weight", LayerClass::out_proj},
      {"norm.weight", LayerClass::norm}};
  for (const auto& [s, c] : kSuffixes)
    if (suffix == s) return TensorRole{c, block};
  return std::nullopt;
}

/// Which tensors to perturb: a tensor is targeted when its class is selected
/// and its block is selected (global tensors match any block selection).
struct TargetSelector {
  std::set<LayerClass> classes;
  std::optional<std::set<std::size_t>> blocks;  // nullopt selects every block

  static TargetSelector all() {
    return {std::set<LayerClass>(std::begin(kAllLayerClasses), std::end(kAllLayerClasses)),
            std::nullopt};
  }

  bool matches(const TensorRole& role) const {
    if (!classes.count(role.layer_class)) return false;
    if (!role.block || !blocks) return true;
    return blocks->count(*role.block) != 0;
  }

  /// Compact text form without commas, e.g. "classes=out_proj;blocks=5+6".
  std::string describe() const {
    std::string out = "classes=";
    if (classes.size() == std::size(kAllLayerClasses)) {
      out += "all";
    } else {
      bool first = true;
      for (LayerClass c : kAllLayerClasses) {
        if (!classes.count(c)) continue;
        if (!first) out += '+';
        out += to_string(c);
        first = false;
      }
    }
    out += ";blocks=";
    if (!blocks) {
      out += "all";
    } else {
      bool first = true;
      for (std::size_t b : *blocks) {
        if (!first) out += '+';
        out += std::to_string(b);
        first = false;
      }
    }
    return out;
  }
};

/// Names of the tensors in `ckpt` targeted by `sel`.
inline std::vector<std::string> selected_tensors(const Checkpoint& ckpt, const TargetSelector& sel) {
  std::vector<std::string> names;
  const auto target = ckpt.hpd_target();
  for (const auto& [name, t] : ckpt.tensors) {
    const auto role = classify_tensor(name, target);
    if (role && sel.matches(*role)) names.push_back(name);
  }
  return names;
}

/// New checkpoint in which exactly the selected tensors are perturbed.
inline Checkpoint perturb_checkpoint(const Checkpoint& ckpt, const TargetSelector& sel,
                                     const NoiseSpec& spec) {
  spec.validate();
  if (sel.classes.empty() || (sel.blocks && sel.blocks->empty())) {
    throw SelectionError("empty target selection: " + sel.describe());
  }
  if (sel.blocks) {
    for (std::size_t b : *sel.blocks) {
      if (b >= ckpt.config.n_layers) {
        throw ConfigError("block " + std::to_string(b) + " out of range for " +
                          std::to_string(ckpt.config.n_layers) + " layers");
      }
    }
  }
  const auto names = selected_tensors(ckpt, sel);
  if (names.empty()) throw SelectionError("selection matches no tensors: " + sel.describe());

  Checkpoint out = ckpt;
  for (const auto& name : names) out.tensors.at(name) = perturb_tensor(ckpt.at(name), name, spec);
  out.metadata["perturb.selector"] = sel.describe();
  out.metadata["perturb.spec"] = spec.describe();
  return out;
}

}  // namespace hpdssm
