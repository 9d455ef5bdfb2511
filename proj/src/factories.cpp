#include "cgm/factories.hpp"

#include <cmath>

#include "cgm/errors.hpp"
#include "cgm/rng.hpp"

namespace cgm {

const std::vector<ArchSpec>& known_architectures() {
  static const std::vector<ArchSpec> archs = {
      {"vae_celeba", 128, LatentDistribution::TruncatedNormal, {64, 64, 32, 16, 3}, {8, 16, 32, 64}},
      {"gan_celeba", 150, LatentDistribution::Uniform, {128, 64, 32, 16, 3}, {4, 8, 16, 32}},
      {"vae_cifar", 128, LatentDistribution::TruncatedNormal, {64, 32, 16, 3}, {4, 8, 16}},
      {"gan_cifar", 150, LatentDistribution::Uniform, {64, 32, 16, 3}, {4, 8, 16}},
  };
  return archs;
}

const ArchSpec& architecture(std::string_view key) {
  for (const auto& a : known_architectures())
    if (a.key == key) return a;
  throw ConfigError("unknown architecture '" + std::string(key) + "'");
}

namespace {

Tensor normal_tensor(Shape shape, std::uint64_t seed, const std::string& name, double stddev) {
  Rng rng = Rng::stream(seed, "weights:" + name);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

NodeSpec make_node(std::string id, OpKind op, std::vector<ParentRef> parents) {
  NodeSpec n;
  n.id = std::move(id);
  n.op = op;
  n.parents = std::move(parents);
  return n;
}

NodeSpec activation_node(std::string id, std::string parent, kernels::Activation a) {
  auto n = make_node(std::move(id), OpKind::Activation, {ParentRef::of(std::move(parent))});
  n.activation = a;
  return n;
}

NodeSpec deconv_node(std::string id, std::string parent, const std::string& weight) {
  auto n = make_node(std::move(id), OpKind::ConvTranspose2d, {ParentRef::of(std::move(parent))});
  n.conv = {2, 2, 1};
  n.weights["weight"] = weight;
  return n;
}

std::vector<Variable> all_channels(const std::string& node, std::size_t channels) {
  std::vector<Variable> v;
  for (std::size_t c = 0; c < channels; ++c) v.push_back({node, c});
  return v;
}

}  // namespace

CgmGraph make_toy_linear() {
  GraphDescription d;
  d.latent = LatentSpec::uniform(2);
  auto v = make_node("v", OpKind::Linear, {ParentRef::parse("z")});
  v.out_shape = {2, 1, 1};
  v.weights["weight"] = "v.weight";
  auto y = make_node("y", OpKind::Linear, {ParentRef::of("v")});
  y.out_shape = {1, 1, 3};
  y.weights["weight"] = "y.weight";
  d.nodes = {v, y};
  d.output = "y";
  d.layers = {{"v", all_channels("v", 2)}};
  WeightStore w;
  w["v.weight"] = Tensor({2, 2}, {1, 0, 0, 1});
  w["y.weight"] = Tensor({3, 2}, {1, 0, 0, 1, 1, 1});
  return CgmGraph::build(std::move(d), std::move(w));
}

CgmGraph make_toy_dag() {
  GraphDescription d;
  d.latent = LatentSpec::uniform(2);
  auto scalar = [](std::string id, std::vector<ParentRef> parents) {
    auto n = make_node(id, OpKind::Linear, std::move(parents));
    n.out_shape = {1, 1, 1};
    n.weights["weight"] = id + ".weight";
    return n;
  };
  d.nodes = {scalar("V2", {ParentRef::parse("z:0")}), scalar("V3", {ParentRef::parse("z:1")}),
             scalar("V1", {ParentRef::of("V2"), ParentRef::of("V3")}), scalar("Y", {ParentRef::of("V1")})};
  d.output = "Y";
  d.layers = {{"layer1", {{"V2", 0}, {"V3", 0}}}};
  WeightStore w;
  w["V2.weight"] = Tensor({1, 1}, {1});
  w["V3.weight"] = Tensor({1, 1}, {1});
  w["V1.weight"] = Tensor({1, 2}, {1, 1});
  w["Y.weight"] = Tensor({1, 1}, {1});
  return CgmGraph::build(std::move(d), std::move(w));
}

CgmGraph make_seeded_generator(std::string_view key, std::uint64_t seed) {
  if (key == "toy_linear") return make_toy_linear();
  const ArchSpec& a = architecture(key);
  constexpr double kStd = 0.02;
  const std::size_t n_deconv = a.sides.size();
  const std::size_t fc_side = a.sides.front();

  GraphDescription d;
  d.latent = a.distribution == LatentDistribution::Uniform ? LatentSpec::uniform(a.latent_dim)
                                                            : LatentSpec::truncated_normal(a.latent_dim);
  WeightStore w;
  auto add_bn = [&](const std::string& id, const std::string& parent, std::size_t channels) {
    auto n = make_node(id, OpKind::BatchNorm, {ParentRef::of(parent)});
    for (const char* role : {"mean", "var", "gamma", "beta"}) n.weights[role] = id + "." + role;
    w[id + ".mean"] = Tensor({channels}, 0.0f);
    w[id + ".var"] = Tensor({channels}, 1.0f);
    w[id + ".gamma"] = Tensor({channels}, 1.0f);
    w[id + ".beta"] = Tensor({channels}, 0.0f);
    d.nodes.push_back(n);
  };

  const std::size_t c0 = a.channels[0];
  auto fc = make_node("fc", OpKind::Linear, {ParentRef::parse("z")});
  fc.out_shape = {c0, fc_side, fc_side};
  fc.weights = {{"weight", "fc.weight"}, {"bias", "fc.bias"}};
  w["fc.weight"] = normal_tensor({c0 * fc_side * fc_side, a.latent_dim}, seed, "fc.weight", kStd);
  w["fc.bias"] = Tensor({c0 * fc_side * fc_side}, 0.0f);
  d.nodes.push_back(fc);
  add_bn("fc_bn", "fc", c0);
  d.nodes.push_back(activation_node("fc_act", "fc_bn", kernels::Activation::Relu));
  d.layers.push_back({"fc", all_channels("fc_act", c0)});

  std::string prev = "fc_act";
  for (std::size_t i = 1; i <= n_deconv; ++i) {
    const std::string id = "deconv" + std::to_string(i);
    const std::size_t cin = a.channels[i - 1], cout = a.channels[i];
    d.nodes.push_back(deconv_node(id, prev, id + ".weight"));
    w[id + ".weight"] = normal_tensor({cin, cout, 5, 5}, seed, id + ".weight", kStd);
    if (i < n_deconv) {
      add_bn("bn" + std::to_string(i), id, cout);
      const std::string act = "act" + std::to_string(i);
      d.nodes.push_back(activation_node(act, "bn" + std::to_string(i), kernels::Activation::Relu));
      d.layers.push_back({"conv" + std::to_string(i), all_channels(act, cout)});
      prev = act;
    } else {
      d.nodes.push_back(activation_node("out", id, kernels::Activation::Tanh));
    }
  }
  d.output = "out";
  return CgmGraph::build(std::move(d), std::move(w));
}

std::vector<Region> horizontal_bands(std::size_t n_blocks, std::size_t height, std::size_t width) {
  if (n_blocks == 0 || n_blocks > height) throw ConfigError("cannot cut the image into " + std::to_string(n_blocks) + " bands");
  std::vector<Region> regions;
  for (std::size_t b = 0; b < n_blocks; ++b)
    regions.push_back({b * height / n_blocks, 0, (b + 1) * height / n_blocks, width});
  return regions;
}

PlantedModel make_planted_generator(const std::vector<PlantedBlock>& blocks, std::size_t height, std::size_t width,
                                    std::uint64_t seed, std::size_t color_channels) {
  if (blocks.empty()) throw ConfigError("planted generator needs at least one block");
  if (height % 8 != 0 || width % 8 != 0 || height == 0 || width == 0)
    throw ConfigError("planted generator image sides must be positive multiples of 8");
  // Regions: in bounds, pairwise disjoint, covering the image.
  std::vector<int> owner(height * width, -1);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& r = blocks[b].region;
    if (r.y0 >= r.y1 || r.x0 >= r.x1 || r.y1 > height || r.x1 > width)
      throw ConfigError("block " + std::to_string(b) + " has an empty or out-of-bounds region");
    for (std::size_t y = r.y0; y < r.y1; ++y)
      for (std::size_t x = r.x0; x < r.x1; ++x) {
        if (owner[y * width + x] >= 0)
          throw ConfigError("regions of blocks " + std::to_string(owner[y * width + x]) + " and " + std::to_string(b) +
                            " overlap");
        owner[y * width + x] = static_cast<int>(b);
      }
    if (blocks[b].latent_dims == 0 || blocks[b].channels == 0)
      throw ConfigError("block " + std::to_string(b) + " needs at least one latent and one channel");
  }
  for (int o : owner)
    if (o < 0) throw ConfigError("block regions do not tile the image");

  std::size_t latent_total = 0;
  for (const auto& b : blocks) latent_total += b.latent_dims;

  std::vector<std::size_t> partition;
  std::vector<std::set<std::size_t>> block_latents;
  std::vector<Region> regions;
  GraphDescription d;
  d.latent = LatentSpec::uniform(latent_total);
  WeightStore w;
  LayerSel fc_layer{"fc", {}}, conv1{"conv1", {}}, conv2{"conv2", {}};
  const std::size_t s0h = height / 8, s0w = width / 8;
  std::vector<ParentRef> to_sum;

  std::size_t latent_begin = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    const std::string p = "b" + std::to_string(b) + "_";
    const std::size_t ch = blk.channels;
    std::set<std::size_t> lat;
    for (std::size_t k = latent_begin; k < latent_begin + blk.latent_dims; ++k) lat.insert(k);
    block_latents.push_back(lat);
    regions.push_back(blk.region);

    auto fc = make_node(p + "fc", OpKind::Linear, {ParentRef::latent_range(latent_begin, latent_begin + blk.latent_dims - 1)});
    fc.out_shape = {ch, s0h, s0w};
    fc.weights["weight"] = p + "fc.weight";
    w[p + "fc.weight"] = normal_tensor({ch * s0h * s0w, blk.latent_dims}, seed, p + "fc.weight",
                                       std::sqrt(2.0 / static_cast<double>(blk.latent_dims)));
    d.nodes.push_back(fc);
    d.nodes.push_back(activation_node(p + "act0", p + "fc", kernels::Activation::Relu));

    // Each output pixel of a stride-2 5x5 transposed convolution sees about
    // 25/4 taps per input channel.
    const double taps = 25.0 / 4.0;
    const double hidden_std = std::sqrt(2.0 / (static_cast<double>(ch) * taps));
    d.nodes.push_back(deconv_node(p + "deconv1", p + "act0", p + "deconv1.weight"));
    w[p + "deconv1.weight"] = normal_tensor({ch, ch, 5, 5}, seed, p + "deconv1.weight", hidden_std);
    d.nodes.push_back(activation_node(p + "act1", p + "deconv1", kernels::Activation::Relu));
    d.nodes.push_back(deconv_node(p + "deconv2", p + "act1", p + "deconv2.weight"));
    w[p + "deconv2.weight"] = normal_tensor({ch, ch, 5, 5}, seed, p + "deconv2.weight", hidden_std);
    d.nodes.push_back(activation_node(p + "act2", p + "deconv2", kernels::Activation::Relu));
    d.nodes.push_back(deconv_node(p + "deconv3", p + "act2", p + "deconv3.weight"));
    w[p + "deconv3.weight"] = normal_tensor({ch, color_channels, 5, 5}, seed, p + "deconv3.weight",
                                            std::sqrt(1.0 / (static_cast<double>(ch) * taps)));

    auto mask = make_node(p + "mask", OpKind::Mask, {ParentRef::of(p + "deconv3")});
    mask.weights["mask"] = p + "mask";
    Tensor m({height, width}, 0.0f);
    for (std::size_t y = blk.region.y0; y < blk.region.y1; ++y)
      for (std::size_t x = blk.region.x0; x < blk.region.x1; ++x) m[y * width + x] = 1.0f;
    w[p + "mask"] = std::move(m);
    d.nodes.push_back(mask);
    to_sum.push_back(ParentRef::of(p + "mask"));

    for (std::size_t c = 0; c < ch; ++c) {
      fc_layer.variables.push_back({p + "act0", c});
      conv1.variables.push_back({p + "act1", c});
      conv2.variables.push_back({p + "act2", c});
      partition.push_back(b);
    }
    latent_begin += blk.latent_dims;
  }
  d.nodes.push_back(make_node("sum", OpKind::Add, to_sum));
  d.nodes.push_back(activation_node("out", "sum", kernels::Activation::Tanh));
  d.output = "out";
  d.layers = {fc_layer, conv1, conv2};
  return PlantedModel{CgmGraph::build(std::move(d), std::move(w)), std::move(partition), std::move(block_latents),
                      std::move(regions)};
}

PlantedModel make_default_planted(std::uint64_t seed) {
  const auto bands = horizontal_bands(3, 32, 32);
  std::vector<PlantedBlock> blocks;
  for (const auto& r : bands) blocks.push_back({4, 16, r});
  return make_planted_generator(blocks, 32, 32, seed);
}

}  // namespace cgm
