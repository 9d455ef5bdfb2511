#include "cgm/influence.hpp"

#include <algorithm>
#include <cmath>

#include "cgm/errors.hpp"
#include "cgm/parallel.hpp"

namespace cgm {

namespace {

struct PairSample {
  Tensor z1;
  Tensor z2;
};

PairSample sample_pair(const LatentSpec& latent, std::uint64_t seed, std::size_t index) {
  Rng rng = Rng::stream(seed, "influence-pair", index);
  PairSample p;
  p.z1 = latent.sample(rng);
  p.z2 = latent.sample(rng);
  return p;
}

}  // namespace

std::vector<InfluenceMap> influence_maps(const CgmGraph& g, const std::vector<std::vector<Variable>>& modules,
                                         const InfluenceOptions& opts) {
  if (opts.n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
  for (const auto& m : modules)
    for (const auto& v : m) g.check_variable(v);

  const Shape& out_shape = g.node_shape(g.output_index());
  const std::size_t channels = out_shape[1], h = out_shape[2], w = out_shape[3];
  const std::size_t size = channels * h * w;
  const std::size_t n_modules = modules.size();

  const std::size_t n_chunks = (opts.n_pairs + kPairChunk - 1) / kPairChunk;
  const std::size_t workers = opts.workers == 0 ? default_workers() : opts.workers;

  std::vector<std::vector<double>> total(n_modules, std::vector<double>(size, 0.0));
  // Chunks are computed in waves of `workers` and folded in chunk order.
  for (std::size_t wave = 0; wave < n_chunks; wave += workers) {
    const std::size_t in_wave = std::min(workers, n_chunks - wave);
    std::vector<std::vector<std::vector<double>>> partial(in_wave);
    parallel_for(in_wave, workers, [&](std::size_t t) {
      const std::size_t chunk = wave + t;
      auto& sums = partial[t];
      sums.assign(n_modules, std::vector<double>(size, 0.0));
      const std::size_t first = chunk * kPairChunk;
      const std::size_t last = std::min(opts.n_pairs, first + kPairChunk);
      for (std::size_t p = first; p < last; ++p) {
        const auto pair = sample_pair(g.latent(), opts.seed, p);
        const auto pass1 = g.record(pair.z1);
        const auto pass2 = g.record(pair.z2);
        const Tensor& y1 = pass1.output();
        for (std::size_t m = 0; m < n_modules; ++m) {
          if (modules[m].empty()) continue;
          const Tensor hybrid = hybridize_recorded(g, modules[m], pass1, pass2);
          auto& acc = sums[m];
          for (std::size_t e = 0; e < size; ++e) acc[e] += std::fabs(static_cast<double>(hybrid[e]) - y1[e]);
        }
      }
    });
    for (std::size_t t = 0; t < in_wave; ++t)
      for (std::size_t m = 0; m < n_modules; ++m)
        for (std::size_t e = 0; e < size; ++e) total[m][e] += partial[t][m][e];
  }

  std::vector<InfluenceMap> maps(n_modules);
  const double inv_n = 1.0 / static_cast<double>(opts.n_pairs);
  for (std::size_t m = 0; m < n_modules; ++m) {
    auto& im = maps[m];
    im.n_pairs = opts.n_pairs;
    im.seed = opts.seed;
    im.per_channel = Tensor({channels, h, w});
    im.gray = Tensor({h, w});
    for (std::size_t px = 0; px < h * w; ++px) {
      double gray = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double mean = total[m][c * h * w + px] * inv_n;
        im.per_channel[c * h * w + px] = static_cast<float>(mean);
        gray += mean;
      }
      im.gray[px] = static_cast<float>(gray / static_cast<double>(channels));
    }
  }
  return maps;
}

InfluenceMap influence_map(const CgmGraph& g, const std::vector<Variable>& module, const InfluenceOptions& opts) {
  return influence_maps(g, {module}, opts).front();
}

EimStack elementary_influence_maps(const CgmGraph& g, const LayerSel& layer, const InfluenceOptions& opts) {
  if (layer.variables.empty()) throw ValidationError("layer '" + layer.name + "' has no variables");
  std::vector<std::vector<Variable>> modules;
  for (const auto& v : layer.variables) modules.push_back({v});
  const auto maps = influence_maps(g, modules, opts);
  const std::size_t h = maps.front().gray.dim(0), w = maps.front().gray.dim(1);
  EimStack stack;
  stack.layer = layer.name;
  stack.seed = opts.seed;
  stack.n_pairs = opts.n_pairs;
  stack.maps = Tensor({maps.size(), h, w});
  for (std::size_t c = 0; c < maps.size(); ++c)
    std::copy(maps[c].gray.data().begin(), maps[c].gray.data().end(),
              stack.maps.data().begin() + static_cast<std::ptrdiff_t>(c * h * w));
  return stack;
}

double individual_influence(const InfluenceMap& m) {
  if (m.gray.empty()) return 0.0;
  double sum = 0.0;
  for (float v : m.gray.data()) sum += v;
  return sum / static_cast<double>(m.gray.size());
}

RegressionResult influence_size_regression(const std::vector<std::pair<double, double>>& points) {
  RegressionResult r;
  r.n = points.size();
  if (points.size() < 2) throw ValidationError("regression needs at least two modules");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw ValidationError("degenerate regression design: all modules have the same channel count");
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0.0;
  for (const auto& [x, y] : points) {
    const double e = y - (r.intercept + r.slope * x);
    ss_res += e * e;
  }
  // A constant response fitted exactly counts as a perfect fit.
  r.r2 = syy > 0.0 ? 1.0 - ss_res / syy : (ss_res <= 1e-24 ? 1.0 : 0.0);
  return r;
}

}  // namespace cgm
