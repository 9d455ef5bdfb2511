#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cgm/graph.hpp"

namespace cgm {

/// DCGAN-style generator hyperparameters: a fully connected layer reshaped
/// to `channels[0]` maps, then one stride-2 5x5 transposed convolution per
/// remaining entry, each doubling the side. Hidden layers use batch norm and
/// ReLU; the last layer uses tanh.
struct ArchSpec {
  std::string key;
  std::size_t latent_dim = 0;
  LatentDistribution distribution = LatentDistribution::Uniform;
  std::vector<std::size_t> channels;  // FC output, then each deconv output
  std::vector<std::size_t> sides;     // side of each hidden map; the output side is twice the last
};

const std::vector<ArchSpec>& known_architectures();
const ArchSpec& architecture(std::string_view key);

/// Table-1 style generator (or the toy linear model for "toy_linear") with
/// N(0, 0.02^2) weights drawn from per-tensor streams of `seed`. Batch-norm
/// statistics are fixed to mean 0, variance 1.
CgmGraph make_seeded_generator(std::string_view arch, std::uint64_t seed);

/// Two latents on [-1,1], v = (z1, z2), y = (v1, v2, v1 + v2) as a 1x3 image.
/// Layer "v" holds the two variables.
CgmGraph make_toy_linear();

/// z1 -> V2, z2 -> V3, {V2, V3} -> V1, V1 -> Y, all scalar; layer "layer1" = {V2, V3}.
CgmGraph make_toy_dag();

struct Region {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open [y0,y1) x [x0,x1)
};

struct PlantedBlock {
  std::size_t latent_dims = 4;
  std::size_t channels = 8;
  Region region;
};

struct PlantedModel {
  CgmGraph graph;
  /// Block index of every variable of an analysis layer. The layers "fc",
  /// "conv1" and "conv2" list their variables in the same block-major order.
  std::vector<std::size_t> partition;
  std::vector<std::set<std::size_t>> block_latents;
  std::vector<Region> regions;
};

/// Generator with planted modular structure: every block owns a private set
/// of latents, its own FC + transposed-convolution stack, and a masked output
/// region; block outputs are summed and passed through tanh. Regions must
/// tile the image; height and width must be multiples of 8.
PlantedModel make_planted_generator(const std::vector<PlantedBlock>& blocks, std::size_t height, std::size_t width,
                                    std::uint64_t seed, std::size_t color_channels = 3);

/// `n_blocks` horizontal bands of near-equal height covering the image.
std::vector<Region> horizontal_bands(std::size_t n_blocks, std::size_t height, std::size_t width);

/// Three blocks of 4 latents and 16 channels on a 32x32 image.
PlantedModel make_default_planted(std::uint64_t seed);

}  // namespace cgm
