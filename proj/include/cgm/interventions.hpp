#pragma once

#include <functional>
#include <vector>

#include "cgm/graph.hpp"

namespace cgm {

/// A subset of one layer's variables treated as a single interventional unit.
struct ModuleSel {
  LayerSel layer;
  std::vector<Variable> channels;

  /// Checks channels are distinct members of the layer (empty allowed).
  void validate(const CgmGraph& g) const;
  static ModuleSel of_layer(const LayerSel& layer, const std::vector<std::size_t>& indices);
};

/// Constant assignments {V_e := v0_e}, one [H,W] value per targeted variable.
struct Intervention {
  std::vector<Variable> targets;
  std::vector<Tensor> values;

  /// The values `targets` take in a recorded pass.
  static Intervention from_record(const CgmGraph& g, const std::vector<Variable>& targets,
                                  const Activations& acts);
  Overrides to_overrides(const CgmGraph& g) const;
};

/// Interventional model: targeted variables become constants and lose their
/// incoming edges. Shares weights and equations with `g`.
CgmGraph intervene(const CgmGraph& g, const Intervention& iv);

/// Unit-level counterfactual Y^E_{v0}(z).
Tensor counterfactual(const CgmGraph& g, const Intervention& iv, const Tensor& z);

struct HybridResult {
  Tensor hybrid;
  Tensor original1;
  Tensor original2;
};

/// E-level hybridization of z1 by z2: the output of z1's pass with the module
/// channels replaced by the values they take when generating from z2.
HybridResult hybridize(const CgmGraph& g, const ModuleSel& module, const Tensor& z1, const Tensor& z2);

/// Hybrid output from already recorded passes (no upstream recomputation).
Tensor hybridize_recorded(const CgmGraph& g, const std::vector<Variable>& module, const Activations& pass1,
                          const Activations& pass2);

/// Latent vector equal to z1 except on `coords`, which come from z2.
Tensor mix_latents(const Tensor& z1, const Tensor& z2, const std::set<std::size_t>& coords);

/// Output for z with coordinate k replaced by f(z_k). Values leaving the
/// latent interval are clamped with a warning.
Tensor apply_latent_transform(const CgmGraph& g, std::size_t k, const std::function<float(float)>& f,
                              const Tensor& z);

}  // namespace cgm
