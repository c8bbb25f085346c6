#pragma once

#include <algorithm>
#include <optional>
#include <string>

#include "hpdssm/checkpoint.hpp"
#include "hpdssm/linalg.hpp"
#include "hpdssm/perturb.hpp"
#include "hpdssm/svd.hpp"

namespace hpdssm {

/// Hybrid Projection Decomposition of a dense layer y = W h + b with W
/// stored out x in. With W = P diag(S) Q^T:
///   w_cim = Q diag(S)  (in x r)   analog stage,   z = w_cim^T h
///   v     = P          (out x r)  digital stage,  y = v z + b
/// Only w_cim is ever exposed to device noise.
struct HpdLayer {
  Tensor w_cim;
  Tensor v;
  std::optional<Tensor> bias;

  std::size_t rank() const { return w_cim.cols(); }
  std::size_t in_features() const { return w_cim.rows(); }
  std::size_t out_features() const { return v.rows(); }
};

/// Keeps the `rank` largest singular directions (all of them when nullopt).
inline HpdLayer decompose(const Tensor& w, std::optional<Tensor> bias = std::nullopt,
                          std::optional<std::size_t> rank = std::nullopt) {
  const std::size_t out = w.rows(), in = w.cols();
  const std::size_t full = std::min(out, in);
  const std::size_t r = rank.value_or(full);
  if (r < 1 || r > full) {
    throw DomainError("hpd rank " + std::to_string(r) + " outside [1, " + std::to_string(full) + "]");
  }
  if (bias && bias->size() != out) throw ShapeError("hpd bias length does not match output size");

  const SvdResult f = svd(w);
  HpdLayer layer{Tensor({in, r}), Tensor({out, r}), std::move(bias)};
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t i = 0; i < in; ++i) layer.w_cim(i, k) = f.vt(k, i) * f.s[k];
    for (std::size_t o = 0; o < out; ++o) layer.v(o, k) = f.u(o, k);
  }
  return layer;
}

/// Batched two-stage product for rows of x (L x in): (x w_cim) v^T.
inline Tensor hybrid_apply(const Tensor& w_cim, const Tensor& v, const Tensor& x) {
  return matmul_nt(matmul(x, w_cim), v);
}

/// Single-vector forward. When `noise` is given, the analog factor is
/// perturbed under the tensor name "hpd.w_cim"; the digital stage is exact.
inline Tensor hybrid_forward(const HpdLayer& layer, const Tensor& h,
                             const std::optional<NoiseSpec>& noise = std::nullopt) {
  if (h.size() != layer.in_features()) throw ShapeError("hybrid_forward: input size mismatch");
  const Tensor analog = noise ? perturb_tensor(layer.w_cim, kHpdCimName, *noise) : layer.w_cim;
  const std::size_t r = layer.rank();
  Tensor z({r});
  for (std::size_t i = 0; i < layer.in_features(); ++i) {
    const double hi = h[i];
    for (std::size_t k = 0; k < r; ++k) z[k] += analog(i, k) * hi;
  }
  Tensor y = matvec(layer.v, z);
  if (layer.bias)
    for (std::size_t o = 0; o < y.size(); ++o) y[o] += (*layer.bias)[o];
  return y;
}

struct HpdPlacement {
  std::string target = "lm_head.weight";
  std::optional<std::size_t> rank;  // nullopt: full rank
};

/// Projections that may host HPD (2-D matmul weights; embedding lookups,
/// depthwise conv filters, and A_log are excluded).
inline bool is_hpd_capable(const std::string& name) {
  const auto role = classify_tensor(name, std::nullopt);
  if (!role) return false;
  switch (role->layer_class) {
    case LayerClass::in_proj:
    case LayerClass::x_proj:
    case LayerClass::dt_proj:
    case LayerClass::out_proj:
    case LayerClass::lm_head:
      return true;
    default:
      return false;
  }
}

/// Accepts a full tensor name or one missing its ".weight" suffix.
inline std::string resolve_target_name(const Checkpoint& ckpt, const std::string& target) {
  if (ckpt.contains(target)) return target;
  if (ckpt.contains(target + ".weight")) return target + ".weight";
  throw PlacementError("hpd target \"" + target + "\" not found in checkpoint");
}

/// Replaces the placement target with "hpd.w_cim" and "hpd.v". Both factors
/// are rounded to storage precision so the rewritten checkpoint survives a
/// save/load round trip unchanged.
inline Checkpoint apply_hpd(const Checkpoint& ckpt, const HpdPlacement& placement = {}) {
  if (ckpt.hpd_target()) throw PlacementError("checkpoint already carries an HPD rewrite");
  const std::string name = resolve_target_name(ckpt, placement.target);
  const Tensor& w = ckpt.at(name);
  if (w.rank() != 2 || !is_hpd_capable(name)) {
    throw PlacementError("hpd target \"" + name + "\" is not a 2-D projection");
  }
  HpdLayer layer = decompose(w, std::nullopt, placement.rank);
  const std::size_t rank = layer.rank();

  Checkpoint out = ckpt;
  out.tensors.erase(name);
  out.tensors.emplace(kHpdCimName, round_to_storage(std::move(layer.w_cim)));
  out.tensors.emplace(kHpdDigitalName, round_to_storage(std::move(layer.v)));
  out.metadata[kHpdTargetKey] = name;
  out.metadata["hpd.rank"] = std::to_string(rank);
  return out;
}

/// The HPD layer stored in a rewritten checkpoint.
inline HpdLayer hpd_layer_of(const Checkpoint& ckpt) {
  if (!ckpt.hpd_target()) throw PlacementError("checkpoint has no HPD rewrite");
  return {ckpt.at(kHpdCimName), ckpt.at(kHpdDigitalName), std::nullopt};
}

}  // namespace hpdssm
