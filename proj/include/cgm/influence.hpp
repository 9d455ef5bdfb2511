#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgm/graph.hpp"
#include "cgm/interventions.hpp"

namespace cgm {

/// Mean absolute causal effect of a module on every output pixel.
struct InfluenceMap {
  Tensor per_channel;  // [C,H,W]
  Tensor gray;         // [H,W], unweighted mean over output channels
  std::size_t n_pairs = 0;
  std::uint64_t seed = 0;
};

/// One flattened gray influence map per channel of a layer, ordered by the
/// layer's variable order.
struct EimStack {
  std::string layer;
  Tensor maps;  // [C,H,W]
  std::uint64_t seed = 0;
  std::size_t n_pairs = 0;

  std::size_t rows() const { return maps.dim(0); }
  std::size_t height() const { return maps.dim(1); }
  std::size_t width() const { return maps.dim(2); }
  std::size_t pixels() const { return height() * width(); }
  std::span<const float> row(std::size_t i) const { return maps.data().subspan(i * pixels(), pixels()); }
};

struct InfluenceOptions {
  std::size_t n_pairs = 256;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = all hardware threads
};

/// Pairs are processed in fixed chunks of this many; chunk sums are combined
/// in chunk order, so results do not depend on the worker count.
inline constexpr std::size_t kPairChunk = 16;

/// Estimates IM(E) = E_{z1,z2} |Y^E_{v(z2)}(z1) - Y(z1)| with n_pairs i.i.d.
/// (z1, z2) pairs drawn from the latent distribution.
InfluenceMap influence_map(const CgmGraph& g, const std::vector<Variable>& module, const InfluenceOptions& opts);

/// Influence maps of several modules sharing the same sampled pairs.
std::vector<InfluenceMap> influence_maps(const CgmGraph& g, const std::vector<std::vector<Variable>>& modules,
                                         const InfluenceOptions& opts);

EimStack elementary_influence_maps(const CgmGraph& g, const LayerSel& layer, const InfluenceOptions& opts);

/// Pixel average of the gray map.
double individual_influence(const InfluenceMap& m);

struct RegressionResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares of influence on module channel count.
/// Throws ValidationError when fewer than two distinct channel counts occur.
RegressionResult influence_size_regression(const std::vector<std::pair<double, double>>& points);

}  // namespace cgm
