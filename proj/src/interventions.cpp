#include "cgm/interventions.hpp"

#include <set>

#include "cgm/errors.hpp"
#include "cgm/log.hpp"

namespace cgm {

void ModuleSel::validate(const CgmGraph& g) const {
  std::set<Variable> in_layer(layer.variables.begin(), layer.variables.end());
  std::set<Variable> seen;
  for (const auto& v : channels) {
    g.check_variable(v);
    if (!in_layer.count(v))
      throw ValidationError("module variable " + g.label(v) + " is not in layer '" + layer.name + "'");
    if (!seen.insert(v).second) throw ValidationError("module lists " + g.label(v) + " twice");
  }
}

ModuleSel ModuleSel::of_layer(const LayerSel& layer, const std::vector<std::size_t>& indices) {
  ModuleSel m{layer, {}};
  for (auto i : indices) {
    if (i >= layer.variables.size())
      throw ValidationError("layer '" + layer.name + "' has no channel index " + std::to_string(i));
    m.channels.push_back(layer.variables[i]);
  }
  return m;
}

Intervention Intervention::from_record(const CgmGraph& g, const std::vector<Variable>& targets,
                                       const Activations& acts) {
  Intervention iv;
  iv.targets = targets;
  for (const auto& v : targets) iv.values.push_back(g.value_of(acts, v));
  return iv;
}

Overrides Intervention::to_overrides(const CgmGraph& g) const {
  if (targets.size() != values.size())
    throw DimensionError("intervention has " + std::to_string(targets.size()) + " targets but " +
                         std::to_string(values.size()) + " values");
  Overrides ov;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    g.check_variable(targets[j]);
    const auto shape = g.variable_shape(targets[j]);
    if (values[j].shape() != shape)
      throw DimensionError("value for " + g.label(targets[j]) + " has shape " + shape_to_string(values[j].shape()) +
                           ", expected " + shape_to_string(shape));
    ov[g.node_index(targets[j].node)][targets[j].channel] = values[j];
  }
  return ov;
}

CgmGraph intervene(const CgmGraph& g, const Intervention& iv) { return g.with_overrides(iv.to_overrides(g)); }

Tensor counterfactual(const CgmGraph& g, const Intervention& iv, const Tensor& z) {
  return intervene(g, iv).evaluate(z);
}

Tensor hybridize_recorded(const CgmGraph& g, const std::vector<Variable>& module, const Activations& pass1,
                          const Activations& pass2) {
  if (module.empty()) return pass1.output();
  const auto iv = Intervention::from_record(g, module, pass2);
  return g.propagate(pass1, iv.to_overrides(g)).output();
}

HybridResult hybridize(const CgmGraph& g, const ModuleSel& module, const Tensor& z1, const Tensor& z2) {
  module.validate(g);
  const auto pass1 = g.record(z1);
  const auto pass2 = g.record(z2);
  HybridResult r;
  r.hybrid = hybridize_recorded(g, module.channels, pass1, pass2);
  r.original1 = pass1.output();
  r.original2 = pass2.output();
  return r;
}

Tensor mix_latents(const Tensor& z1, const Tensor& z2, const std::set<std::size_t>& coords) {
  if (z1.shape() != z2.shape())
    throw DimensionError("latent shapes differ: " + shape_to_string(z1.shape()) + " vs " +
                         shape_to_string(z2.shape()));
  Tensor z = z1;
  for (auto k : coords) {
    if (k >= z.size()) throw DimensionError("latent coordinate " + std::to_string(k) + " out of range");
    z[k] = z2[k];
  }
  return z;
}

Tensor apply_latent_transform(const CgmGraph& g, std::size_t k, const std::function<float(float)>& f,
                              const Tensor& z) {
  if (k >= g.latent_dim())
    throw DimensionError("latent coordinate " + std::to_string(k) + " out of range for K=" +
                         std::to_string(g.latent_dim()));
  Tensor moved = g.latent().clamp(z);
  moved[k] = f(moved[k]);
  const auto& iv = g.latent().intervals[k];
  if (moved[k] < iv.lo || moved[k] > iv.hi)
    warn("latent transform maps coordinate " + std::to_string(k) + " outside its interval; clamping");
  return g.evaluate(g.latent().clamp(moved, false));
}

}  // namespace cgm
