// Acceptance suite: one PASS/FAIL line per criterion, with its runtime budget.
// Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "cgm/cli.hpp"
#include "cgm/clustering.hpp"
#include "cgm/factories.hpp"
#include "cgm/influence.hpp"
#include "cgm/interventions.hpp"
#include "cgm/io.hpp"
#include "temp_dir.hpp"

using namespace cgm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// -- 1 -----------------------------------------------------------------------

Outcome zero_counterfactual() {
  const std::vector<std::string> archs{"vae_celeba", "gan_celeba", "vae_cifar", "gan_cifar"};
  std::vector<CgmGraph> models;
  for (std::size_t i = 0; i < archs.size(); ++i) models.push_back(make_seeded_generator(archs[i], 1000 + i));
  Rng rng = Rng::stream(1, "acceptance-zero-cf");
  std::size_t exact = 0;
  const std::size_t trials = 100;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& g = models[t % models.size()];
    const auto z = g.latent().sample(rng);
    const auto& layer = g.layers()[rng.below(g.layers().size())];
    std::vector<Variable> e;
    for (const auto& v : layer.variables)
      if (rng.uniform() < 0.5) e.push_back(v);
    if (e.empty()) e.push_back(layer.variables[rng.below(layer.variables.size())]);
    const auto acts = g.record(z);
    exact += bit_equal(counterfactual(g, Intervention::from_record(g, e, acts), z), acts.output()) ? 1 : 0;
  }
  return {exact == trials, std::to_string(exact) + "/" + std::to_string(trials) + " bit-exact"};
}

// -- 2 -----------------------------------------------------------------------

Outcome closed_form_influence() {
  const auto g = make_toy_linear();
  InfluenceOptions o;
  o.n_pairs = 10000;
  o.seed = 2;
  // Module {v2}: y = (v1, v2, v1 + v2) moves in its last two pixels.
  const auto im = influence_map(g, {{"v", 1}}, o);
  const auto& m = im.gray;
  const double ind = individual_influence(im);
  const bool ok = std::fabs(m[0] - 0.0) <= 0.02 && std::fabs(m[1] - 2.0 / 3.0) <= 0.02 &&
                  std::fabs(m[2] - 2.0 / 3.0) <= 0.02 && std::fabs(ind - 4.0 / 9.0) <= 0.02;
  return {ok, "IM=(" + fmt(m[0]) + ", " + fmt(m[1]) + ", " + fmt(m[2]) + "), individual " + fmt(ind)};
}

// -- 3 -----------------------------------------------------------------------

Outcome planted_exactness() {
  const auto bands = horizontal_bands(3, 32, 32);
  std::vector<PlantedBlock> blocks;
  for (const auto& r : bands) blocks.push_back({4, 8, r});
  const auto pm = make_planted_generator(blocks, 32, 32, 3);
  const auto& g = pm.graph;
  Rng rng = Rng::stream(3, "acceptance-planted");
  std::size_t exact = 0, total = 0;
  for (const auto& layer : g.layers())
    for (std::size_t b = 0; b < pm.block_latents.size(); ++b) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < pm.partition.size(); ++i)
        if (pm.partition[i] == b) idx.push_back(i);
      const auto module = ModuleSel::of_layer(layer, idx);
      if (g.shares_latent_ancestor(module.channels, layer)) return {false, "block shares a latent ancestor"};
      const auto anc = g.latent_ancestors(module.channels);
      for (int p = 0; p < 50; ++p) {
        const auto z1 = g.latent().sample(rng), z2 = g.latent().sample(rng);
        const auto r = hybridize(g, module, z1, z2);
        exact += bit_equal(r.hybrid, g.evaluate(mix_latents(z1, z2, anc))) ? 1 : 0;
        ++total;
      }
    }
  return {exact == total, std::to_string(exact) + "/" + std::to_string(total) +
                              " hybrids bit-exact (3 layers x 3 blocks x 50 pairs)"};
}

// -- 4 and 5 -----------------------------------------------------------------

struct RecoveryRun {
  double agreement = 0.0;
  StabilityEntry k3, k4;
  bool done = false;
};

RecoveryRun& recovery() {
  static RecoveryRun r;
  if (r.done) return r;
  const auto pm = make_default_planted(4);
  InfluenceOptions o;
  o.n_pairs = 256;
  o.seed = 40;
  const auto eims = elementary_influence_maps(pm.graph, pm.graph.layer("conv1"), o);
  const auto s = Matrix::from_stack(preprocess_maps(eims, 3, 75.0));
  const auto model = fit_clusters(s, 3, ClusterMethod::Nmf);
  r.agreement = match_labelings(pm.partition, model.assignments, 3).consistency;
  StabilityOptions so;
  so.repetitions = 20;
  so.seed = 41;
  const auto rep = stability_analysis(s, {3, 4}, so);
  r.k3 = rep.entries[0];
  r.k4 = rep.entries[1];
  r.done = true;
  return r;
}

Outcome module_recovery() {
  const auto& r = recovery();
  const bool ok = r.agreement >= 0.9 && r.k3.consistency_mean >= 0.9 && r.k3.cosine_mean >= 0.9;
  return {ok, "agreement " + fmt(r.agreement) + ", K=3 consistency " + fmt(r.k3.consistency_mean) + ", cosine " +
                  fmt(r.k3.cosine_mean)};
}

Outcome consistency_drop() {
  const auto& r = recovery();
  const double drop = r.k3.consistency_mean - r.k4.consistency_mean;
  return {drop >= 0.1, "K=3 " + fmt(r.k3.consistency_mean) + ", K=4 " + fmt(r.k4.consistency_mean) + ", drop " +
                           fmt(drop)};
}

// -- 6 -----------------------------------------------------------------------

Outcome nmf_properties() {
  std::size_t monotone = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    Rng rng = Rng::stream(6, "acceptance-nmf", t);
    Matrix s(20, 50);
    for (auto& v : s.data) v = rng.uniform();
    NmfOptions o;
    o.seed = t;
    const auto r = nmf(s, 5, o);
    bool ok = true;
    for (std::size_t i = 1; i < r.error_history.size(); ++i) ok &= r.error_history[i] <= r.error_history[i - 1];
    monotone += ok ? 1 : 0;
  }
  Rng rng = Rng::stream(6, "acceptance-rank1");
  std::vector<double> w(20), h(50);
  for (auto& v : w) v = 0.1 + rng.uniform();
  for (auto& v : h) v = rng.uniform();
  Matrix s(20, 50);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 50; ++j) s(i, j) = w[i] * h[j];
  const auto r = nmf(s, 1);
  const double cos = cosine_similarity(r.h.row(0), h);
  return {monotone == 20 && cos >= 0.999,
          std::to_string(monotone) + "/20 monotone, rank-1 template cosine " + fmt(cos, 6)};
}

// -- 7 -----------------------------------------------------------------------

Outcome matching_properties() {
  Rng rng = Rng::stream(7, "acceptance-matching");
  bool perm_ok = true;
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> a(300), perm{0, 1, 2}, b;
    for (auto& v : a) v = rng.below(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto v : a) b.push_back(perm[v]);
    perm_ok &= match_labelings(a, b, 3).consistency == 1.0;
  }
  // Oracle: best of the 3! relabelings, counted directly, with labels from a
  // different generator.
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<std::size_t> lab(0, 2);
  double ours = 0.0, oracle = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> a(300), b(300);
    for (auto& v : a) v = lab(gen);
    for (auto& v : b) v = lab(gen);
    ours += match_labelings(a, b, 3).consistency;
    std::vector<std::size_t> p{0, 1, 2};
    std::size_t best = 0;
    do {
      std::size_t agree = 0;
      for (std::size_t i = 0; i < 300; ++i) agree += a[i] == p[b[i]];
      best = std::max(best, agree);
    } while (std::next_permutation(p.begin(), p.end()));
    oracle += static_cast<double>(best) / 300.0;
  }
  ours /= 100;
  oracle /= 100;
  const bool ok = perm_ok && std::fabs(ours - oracle) < 1e-12 && std::fabs(ours - 0.39) <= 0.04;
  return {ok, std::string("permutations ") + (perm_ok ? "1.0" : "<1.0") + ", random baseline " + fmt(ours) +
                  " (oracle " + fmt(oracle) + ")"};
}

// -- 8 -----------------------------------------------------------------------

Outcome influence_vs_size() {
  const auto pm = make_default_planted(8);
  const auto& layer = pm.graph.layer("conv1");
  std::vector<std::vector<Variable>> modules;
  std::vector<double> sizes;
  for (std::size_t b = 0; b < pm.block_latents.size(); ++b) {
    std::vector<Variable> members;
    for (std::size_t i = 0; i < pm.partition.size(); ++i)
      if (pm.partition[i] == b) members.push_back(layer.variables[i]);
    for (std::size_t n = 1; n <= members.size(); ++n) {
      modules.emplace_back(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n));
      sizes.push_back(static_cast<double>(n));
    }
  }
  InfluenceOptions o;
  o.n_pairs = 128;
  o.seed = 80;
  const auto maps = influence_maps(pm.graph, modules, o);
  std::vector<std::pair<double, double>> points;
  for (std::size_t i = 0; i < maps.size(); ++i) points.emplace_back(sizes[i], individual_influence(maps[i]));
  const auto reg = influence_size_regression(points);
  return {reg.slope > 0.0 && reg.r2 >= 0.5,
          "slope " + fmt(reg.slope, 5) + ", R^2 " + fmt(reg.r2) + " over " + std::to_string(reg.n) + " modules"};
}

// -- 9 -----------------------------------------------------------------------

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{kToolName};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return io::read_file(p); }

Outcome cli_determinism() {
  test::TempDir dir;
  const auto d = dir.path();
  const auto m = (d / "p.json").string();
  const auto part = (d / "p.partition.csv").string();
  const std::vector<std::vector<std::string>> commands{
      {"--seed", "9", "make-model", "--arch", "planted", "--channels", "8", "--out", m},
      {"--seed", "9", "gen", "--model", m, "--n", "4", "--out-dir", (d / "gen").string()},
      {"--seed", "9", "hybrid", "--model", m, "--layer", "conv1", "--module", "cluster:1", "--clusters", part,
       "--pairs", "4", "--out-dir", (d / "hyb").string()},
      {"--seed", "9", "eim", "--model", m, "--layer", "conv1", "--pairs", "32", "--out-dir", (d / "eim").string()},
      {"--seed", "9", "cluster", "--eims", (d / "eim" / "eims.eims").string(), "--out-dir", (d / "clu").string()},
      {"--seed", "9", "stability", "--eims", (d / "eim" / "eims.eims").string(), "--k", "2..4", "--reps", "3",
       "--method", "both", "--out", (d / "stab.csv").string()},
      {"--seed", "9", "influence-stats", "--model", m, "--layer", "conv1", "--clusters", part, "--pairs", "16",
       "--out-dir", (d / "ist").string()},
  };
  auto snapshot = [&] {
    std::map<std::string, std::vector<std::uint8_t>> files;
    for (const auto& e : fs::recursive_directory_iterator(d)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".csv" || ext == ".eims")) files[e.path().string()] = bytes_of(e.path());
    }
    return files;
  };
  for (const auto& c : commands)
    if (cli(c) != 0) return {false, "command failed: " + c[2]};
  const auto first = snapshot();
  for (const auto& c : commands)
    if (cli(c) != 0) return {false, "rerun failed: " + c[2]};
  const auto second = snapshot();
  std::size_t same = 0;
  for (const auto& [path, b] : first) same += second.count(path) && second.at(path) == b;
  return {same == first.size() && first.size() == second.size() && first.size() >= 8,
          std::to_string(same) + "/" + std::to_string(first.size()) + " CSV/EIMS files byte-identical over " +
              std::to_string(commands.size()) + " commands"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "zero-counterfactual invariance", 60, zero_counterfactual},
      {2, "closed-form influence", 5, closed_form_influence},
      {3, "hybrid equals mixed-latent evaluation", 30, planted_exactness},
      {4, "module recovery and stability", 600, module_recovery},
      {5, "consistency drop from K=3 to K=4", 600, consistency_drop},
      {6, "NMF properties", 10, nmf_properties},
      {7, "matching properties", 5, matching_properties},
      {8, "influence grows with module size", 120, influence_vs_size},
      {9, "CLI determinism", 0, cli_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s <= 0 || secs < c.budget_s;
    const bool pass = o.ok && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << ": " << o.detail << "; " << fmt(secs, 2)
              << " s";
    if (c.budget_s > 0) std::cout << " (limit " << fmt(c.budget_s, 0) << " s" << (in_time ? "" : ", exceeded") << ")";
    std::cout << "\n" << std::flush;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
