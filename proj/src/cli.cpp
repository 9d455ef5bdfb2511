#include "cgm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

#include "cgm/clustering.hpp"
#include "cgm/errors.hpp"
#include "cgm/factories.hpp"
#include "cgm/influence.hpp"
#include "cgm/interventions.hpp"
#include "cgm/io.hpp"
#include "cgm/parallel.hpp"

namespace cgm {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small parsers
// ---------------------------------------------------------------------------

std::size_t parse_count(std::string_view s, std::string_view what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("invalid " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

/// "3", "2..6" or "2,3,5".
std::vector<std::size_t> parse_k_values(const std::string& text) {
  std::vector<std::size_t> ks;
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = parse_count(std::string_view(text).substr(0, dots), "K range");
    const auto hi = parse_count(std::string_view(text).substr(dots + 2), "K range");
    if (lo > hi) throw ConfigError("empty K range '" + text + "'");
    for (auto k = lo; k <= hi; ++k) ks.push_back(k);
  } else {
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) ks.push_back(parse_count(part, "K"));
  }
  if (ks.empty()) throw ConfigError("no K values given");
  for (auto k : ks)
    if (k == 0) throw ConfigError("K must be at least 1");
  return ks;
}

/// "0,3,5-7" -> {0,3,5,6,7}.
std::vector<std::size_t> parse_index_list(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    auto part = text.substr(pos, end - pos);
    if (part.empty()) throw ConfigError("empty entry in index list '" + std::string(text) + "'");
    if (auto dash = part.find('-'); dash != std::string_view::npos) {
      const auto a = parse_count(part.substr(0, dash), "index");
      const auto b = parse_count(part.substr(dash + 1), "index");
      if (a > b) throw ConfigError("descending index range '" + std::string(part) + "'");
      for (auto i = a; i <= b; ++i) out.push_back(i);
    } else {
      out.push_back(parse_count(part, "index"));
    }
    pos = end + 1;
  }
  return out;
}

std::vector<std::string> split_specs(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');)
    if (!part.empty()) out.push_back(part);
  return out;
}

// ---------------------------------------------------------------------------
// Run context
// ---------------------------------------------------------------------------

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string command;

  std::size_t resolved_workers() const { return workers == 0 ? default_workers() : workers; }

  std::string provenance() const {
    std::ostringstream os;
    os << kToolName << ' ' << kToolVersion << "; seed=" << seed << "; workers=" << resolved_workers()
       << "; command=" << command;
    return os.str();
  }

  InfluenceOptions influence(std::size_t n_pairs) const {
    InfluenceOptions o;
    o.n_pairs = n_pairs;
    o.seed = seed;
    o.workers = resolved_workers();
    return o;
  }
};

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
  return p;
}

const LayerSel& pick_layer(const CgmGraph& g, const std::string& name) {
  if (name.empty()) {
    if (g.layers().empty()) throw ConfigError("model declares no layers; pass --vars instead");
    return g.layers().front();
  }
  return g.layer(name);
}

/// Cluster label (1-based) of every layer channel from a "channel,cluster" CSV.
std::vector<std::size_t> read_cluster_labels(const fs::path& path, std::size_t layer_size) {
  const auto t = io::read_csv(path);
  const auto ci = t.column("channel"), ki = t.column("cluster");
  std::vector<std::size_t> labels(layer_size, 0);
  std::vector<bool> seen(layer_size, false);
  for (const auto& row : t.rows) {
    if (row.size() <= std::max(ci, ki)) throw FormatError(FormatErrorKind::Syntax, "short row in " + path.string());
    const auto c = parse_count(row[ci], "channel");
    const auto k = parse_count(row[ki], "cluster");
    if (c >= layer_size)
      throw ConfigError("channel " + std::to_string(c) + " in " + path.string() + " is outside the layer (" +
                        std::to_string(layer_size) + " channels)");
    if (k == 0) throw ConfigError("cluster labels in " + path.string() + " start at 1");
    if (seen[c]) throw ConfigError("channel " + std::to_string(c) + " listed twice in " + path.string());
    seen[c] = true;
    labels[c] = k;
  }
  for (std::size_t c = 0; c < layer_size; ++c)
    if (!seen[c]) throw ConfigError("channel " + std::to_string(c) + " missing from " + path.string());
  return labels;
}

/// Module text: "all", "channels:<list>", or "cluster:<k>" (needs a cluster CSV).
std::vector<std::size_t> resolve_module(const std::string& spec, const LayerSel& layer, const std::string& clusters) {
  const std::string_view s(spec);
  std::vector<std::size_t> idx;
  if (s == "all") {
    idx.resize(layer.variables.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  } else if (s.starts_with("channels:")) {
    idx = parse_index_list(s.substr(9));
  } else if (s.starts_with("cluster:")) {
    if (clusters.empty()) throw ConfigError("--module cluster:K needs --clusters");
    const auto k = parse_count(s.substr(8), "cluster");
    const auto labels = read_cluster_labels(clusters, layer.variables.size());
    for (std::size_t c = 0; c < labels.size(); ++c)
      if (labels[c] == k) idx.push_back(c);
    if (idx.empty()) throw ConfigError("cluster " + std::to_string(k) + " has no channels");
  } else {
    throw ConfigError("unknown module '" + spec + "' (expected all, channels:<list> or cluster:<k>)");
  }
  for (auto i : idx)
    if (i >= layer.variables.size())
      throw ConfigError("channel " + std::to_string(i) + " outside layer '" + layer.name + "'");
  return idx;
}

std::string join_latents(const std::set<std::size_t>& s) {
  if (s.empty()) return "(none)";
  std::string out;
  for (auto k : s) out += (out.empty() ? "z:" : ", z:") + std::to_string(k);
  return out;
}

Tensor map_tile(const EimStack& s, std::size_t i) {
  const auto r = s.row(i);
  return Tensor({1, s.height(), s.width()}, std::vector<float>(r.begin(), r.end()));
}

Tensor stack_montage(const EimStack& s) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(s.rows()))));
  std::vector<std::vector<Tensor>> grid;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    if (i % cols == 0) grid.emplace_back();
    grid.back().push_back(map_tile(s, i));
  }
  return io::montage(grid);
}

std::string num(double v) { return io::format_number(v); }

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct MakeModelArgs {
  std::string arch;
  std::string out;
  std::string blob;
  std::string partition;
  std::size_t blocks = 3;
  std::size_t latents = 4;
  std::size_t channels = 16;
  std::size_t image = 32;
};

void cmd_make_model(const Context& ctx, const MakeModelArgs& a) {
  const fs::path manifest(a.out);
  const fs::path blob = a.blob.empty() ? fs::path(manifest).replace_extension(".cgmb") : fs::path(a.blob);
  if (!manifest.parent_path().empty()) prepare_dir(manifest.parent_path().string());
  if (a.arch == "planted") {
    const auto regions = horizontal_bands(a.blocks, a.image, a.image);
    std::vector<PlantedBlock> blocks;
    for (const auto& r : regions) blocks.push_back({a.latents, a.channels, r});
    const auto pm = make_planted_generator(blocks, a.image, a.image, ctx.seed);
    io::save_model(pm.graph, manifest, blob, ctx.provenance());
    const fs::path part = a.partition.empty() ? fs::path(manifest).replace_extension(".partition.csv")
                                              : fs::path(a.partition);
    io::CsvTable t{ctx.provenance(), {"channel", "cluster"}, {}};
    for (std::size_t c = 0; c < pm.partition.size(); ++c)
      t.rows.push_back({std::to_string(c), std::to_string(pm.partition[c] + 1)});
    io::write_csv(part, t);
    ctx.out << "planted generator: " << a.blocks << " blocks, " << a.latents << " latents and " << a.channels
            << " channels each, " << a.image << "x" << a.image << " output\n";
    ctx.out << "wrote " << manifest.string() << ", " << blob.string() << ", " << part.string() << "\n";
    return;
  }
  const CgmGraph g = a.arch == "toy_dag" ? make_toy_dag() : make_seeded_generator(a.arch, ctx.seed);
  io::save_model(g, manifest, blob, ctx.provenance());
  ctx.out << "model '" << a.arch << "': " << g.node_count() << " nodes, latent dim " << g.latent_dim()
          << ", output " << shape_to_string(g.node_shape(g.output_index())) << "\n";
  ctx.out << "wrote " << manifest.string() << ", " << blob.string() << "\n";
}

struct GenArgs {
  std::string model;
  std::string out_dir;
  std::size_t n = 8;
};

void cmd_gen(const Context& ctx, const GenArgs& a) {
  if (a.n == 0) throw ConfigError("--n must be at least 1");
  const auto g = io::load_model(a.model);
  const auto dir = prepare_dir(a.out_dir);
  io::CsvTable lat{ctx.provenance(), {"sample"}, {}};
  for (std::size_t k = 0; k < g.latent_dim(); ++k) lat.header.push_back("z" + std::to_string(k));
  std::vector<std::vector<Tensor>> grid(1);
  for (std::size_t i = 0; i < a.n; ++i) {
    auto rng = Rng::stream(ctx.seed, "gen", i);
    const Tensor z = g.latent().sample(rng);
    grid[0].push_back(io::squeeze_batch(g.evaluate(z)));
    std::vector<std::string> row{std::to_string(i)};
    for (float v : z.data()) row.push_back(num(v));
    lat.rows.push_back(std::move(row));
  }
  io::write_csv(dir / "latents.csv", lat);
  io::write_png(dir / "samples.png", io::montage(grid), ctx.provenance());
  ctx.out << "generated " << a.n << " samples into " << dir.string() << "\n";
}

struct HybridArgs {
  std::string model;
  std::string layer;
  std::string module;
  std::string clusters;
  std::string out_dir;
  std::size_t pairs = 8;
};

void cmd_hybrid(const Context& ctx, const HybridArgs& a) {
  if (a.pairs == 0) throw ConfigError("--pairs must be at least 1");
  const auto g = io::load_model(a.model);
  const auto& layer = pick_layer(g, a.layer);
  const auto module = ModuleSel::of_layer(layer, resolve_module(a.module, layer, a.clusters));
  module.validate(g);
  const auto dir = prepare_dir(a.out_dir);

  const bool shares = g.shares_latent_ancestor(module.channels, layer);
  const auto ancestors = g.latent_ancestors(module.channels);
  ctx.out << "module: " << module.channels.size() << " of " << layer.variables.size() << " channels of layer '"
          << layer.name << "'\n";
  ctx.out << "latent ancestors: " << join_latents(ancestors) << "\n";
  ctx.out << "shares a latent ancestor with the rest of the layer: " << (shares ? "yes" : "no") << "\n";

  io::CsvTable t{ctx.provenance(), {"pair", "mixed_latent_bit_exact", "max_abs_diff"}, {}};
  std::vector<std::vector<Tensor>> grid;
  std::size_t exact = 0;
  for (std::size_t p = 0; p < a.pairs; ++p) {
    auto rng = Rng::stream(ctx.seed, "hybrid-pair", p);
    const Tensor z1 = g.latent().sample(rng);
    const Tensor z2 = g.latent().sample(rng);
    const auto r = hybridize(g, module, z1, z2);
    grid.push_back({io::squeeze_batch(r.original1), io::squeeze_batch(r.original2), io::squeeze_batch(r.hybrid)});
    if (shares) {
      t.rows.push_back({std::to_string(p), "", ""});
      continue;
    }
    const Tensor mixed = g.evaluate(mix_latents(z1, z2, ancestors));
    const bool same = bit_equal(r.hybrid, mixed);
    exact += same ? 1 : 0;
    t.rows.push_back({std::to_string(p), same ? "1" : "0", num(max_abs_diff(r.hybrid, mixed))});
  }
  io::write_csv(dir / "hybrid.csv", t);
  io::write_png(dir / "hybrids.png", io::montage(grid), ctx.provenance());
  if (shares)
    ctx.out << "mixed-latent check skipped: the module is not separable from the rest of the layer\n";
  else
    ctx.out << "hybrid equals evaluation with mixed latents: " << exact << "/" << a.pairs << " pairs bit-exact\n";
  ctx.out << "wrote " << (dir / "hybrid.csv").string() << ", " << (dir / "hybrids.png").string() << "\n";
}

struct EimArgs {
  std::string model;
  std::string layer;
  std::string out_dir;
  std::size_t pairs = 256;
};

void cmd_eim(const Context& ctx, const EimArgs& a) {
  if (a.pairs == 0) throw ConfigError("--pairs must be at least 1");
  const auto g = io::load_model(a.model);
  const auto& layer = pick_layer(g, a.layer);
  const auto dir = prepare_dir(a.out_dir);
  ctx.out << "computing " << layer.variables.size() << " elementary influence maps of layer '" << layer.name
          << "' with " << a.pairs << " pairs\n";
  const auto stack = elementary_influence_maps(g, layer, ctx.influence(a.pairs));
  io::write_eims(dir / "eims.eims", stack);
  io::write_png(dir / "eims.png", stack_montage(stack), ctx.provenance());
  io::CsvTable t{ctx.provenance(), {"channel", "variable", "individual_influence"}, {}};
  for (std::size_t i = 0; i < stack.rows(); ++i) {
    const auto r = stack.row(i);
    double sum = 0.0;
    for (float v : r) sum += v;
    t.rows.push_back({std::to_string(i), g.label(layer.variables[i]), num(sum / static_cast<double>(r.size()))});
  }
  io::write_csv(dir / "influence.csv", t);
  ctx.out << "wrote " << (dir / "eims.eims").string() << ", " << (dir / "eims.png").string() << ", "
          << (dir / "influence.csv").string() << "\n";
}

struct ClusterArgs {
  std::string eims;
  std::string out_dir;
  std::string method = "nmf";
  std::size_t k = 3;
  std::size_t window = 3;
  double percentile = 75.0;
};

ClusterOptions cluster_options(std::uint64_t seed) {
  ClusterOptions o;
  o.nmf.seed = seed;
  o.kmeans.seed = seed;
  return o;
}

void cmd_cluster(const Context& ctx, const ClusterArgs& a) {
  const auto stack = io::read_eims(a.eims);
  const auto method = parse_method(a.method);
  if (a.k == 0 || a.k > stack.rows())
    throw ConfigError("--k must be between 1 and the number of maps (" + std::to_string(stack.rows()) + ")");
  const auto dir = prepare_dir(a.out_dir);
  const auto s = Matrix::from_stack(preprocess_maps(stack, a.window, a.percentile));
  const auto model = fit_clusters(s, a.k, method, cluster_options(ctx.seed));

  io::CsvTable t{ctx.provenance(), {"channel", "cluster"}, {}};
  std::vector<std::size_t> sizes(a.k, 0);
  for (std::size_t i = 0; i < model.assignments.size(); ++i) {
    t.rows.push_back({std::to_string(i), std::to_string(model.assignments[i] + 1)});
    ++sizes[model.assignments[i]];
  }
  io::write_csv(dir / "clusters.csv", t);

  EimStack templates;
  templates.layer = stack.layer;
  templates.seed = stack.seed;
  templates.n_pairs = stack.n_pairs;
  std::vector<float> tv(model.h.data.begin(), model.h.data.end());
  templates.maps = Tensor({a.k, stack.height(), stack.width()}, std::move(tv));
  io::write_eims(dir / "templates.eims", templates);
  io::write_png(dir / "templates.png", stack_montage(templates), ctx.provenance());

  ctx.out << method_name(method) << " with K=" << a.k << " on " << stack.rows() << " maps of layer '"
          << stack.layer << "'; cluster sizes:";
  for (auto n : sizes) ctx.out << ' ' << n;
  ctx.out << "\nwrote " << (dir / "clusters.csv").string() << ", " << (dir / "templates.eims").string() << ", "
          << (dir / "templates.png").string() << "\n";
}

struct StabilityArgs {
  std::string eims;
  std::string out;
  std::string k = "2..6";
  std::string method = "nmf";
  std::size_t reps = 20;
  std::size_t window = 3;
  double percentile = 75.0;
};

void cmd_stability(const Context& ctx, const StabilityArgs& a) {
  const auto stack = io::read_eims(a.eims);
  const auto ks = parse_k_values(a.k);
  std::vector<ClusterMethod> methods;
  if (a.method == "both")
    methods = {ClusterMethod::Nmf, ClusterMethod::KMeans};
  else
    methods = {parse_method(a.method)};
  if (a.reps == 0) throw ConfigError("--reps must be at least 1");
  const auto s = Matrix::from_stack(preprocess_maps(stack, a.window, a.percentile));

  io::CsvTable t{ctx.provenance(),
                 {"method", "k", "consistency_mean", "consistency_std", "cosine_mean", "cosine_std", "repetitions"},
                 {}};
  for (auto m : methods) {
    StabilityOptions o;
    o.repetitions = a.reps;
    o.seed = ctx.seed;
    o.method = m;
    o.cluster = cluster_options(ctx.seed);
    o.workers = ctx.resolved_workers();
    const auto report = stability_analysis(s, ks, o);
    for (const auto& e : report.entries) {
      t.rows.push_back({std::string(method_name(m)), std::to_string(e.k), num(e.consistency_mean),
                        num(e.consistency_std), num(e.cosine_mean), num(e.cosine_std), std::to_string(a.reps)});
      ctx.out << method_name(m) << " K=" << e.k << ": consistency " << num(e.consistency_mean) << " +/- "
              << num(e.consistency_std) << ", cosine " << num(e.cosine_mean) << " +/- " << num(e.cosine_std) << "\n";
    }
  }
  const fs::path out(a.out);
  if (!out.parent_path().empty()) prepare_dir(out.parent_path().string());
  io::write_csv(out, t);
  ctx.out << "wrote " << out.string() << "\n";
}

struct InfluenceStatsArgs {
  std::string model;
  std::string layer;
  std::string clusters;
  std::string out_dir;
  std::size_t pairs = 256;
  bool nested = false;
};

void cmd_influence_stats(const Context& ctx, const InfluenceStatsArgs& a) {
  const auto g = io::load_model(a.model);
  const auto& layer = pick_layer(g, a.layer);
  const auto labels = read_cluster_labels(a.clusters, layer.variables.size());
  const auto dir = prepare_dir(a.out_dir);
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t c = 0; c < labels.size(); ++c) members[labels[c]].push_back(c);

  struct Row {
    std::size_t cluster;
    std::size_t size;
  };
  std::vector<Row> rows;
  std::vector<std::vector<Variable>> modules;
  for (const auto& [k, chans] : members) {
    const std::size_t first = a.nested ? 1 : chans.size();
    for (std::size_t n = first; n <= chans.size(); ++n) {
      std::vector<Variable> vars;
      for (std::size_t i = 0; i < n; ++i) vars.push_back(layer.variables[chans[i]]);
      modules.push_back(std::move(vars));
      rows.push_back({k, n});
    }
  }
  ctx.out << "estimating influence of " << modules.size() << " modules with " << a.pairs << " pairs\n";
  const auto maps = influence_maps(g, modules, ctx.influence(a.pairs));

  io::CsvTable t{ctx.provenance(), {"module", "cluster", "channels", "individual_influence"}, {}};
  std::vector<std::pair<double, double>> points;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const double inf = individual_influence(maps[i]);
    points.emplace_back(static_cast<double>(rows[i].size), inf);
    t.rows.push_back({std::to_string(i), std::to_string(rows[i].cluster), std::to_string(rows[i].size), num(inf)});
  }
  io::write_csv(dir / "modules.csv", t);
  ctx.out << "wrote " << (dir / "modules.csv").string() << "\n";

  RegressionResult reg;
  try {
    reg = influence_size_regression(points);
  } catch (const ValidationError& e) {
    ctx.err << "warning: no regression written: " << e.what() << "\n";
    return;
  }
  io::CsvTable r{ctx.provenance(), {"slope", "intercept", "r2", "n"}, {}};
  r.rows.push_back({num(reg.slope), num(reg.intercept), num(reg.r2), std::to_string(reg.n)});
  io::write_csv(dir / "regression.csv", r);
  ctx.out << "influence ~ channels: slope " << num(reg.slope) << ", intercept " << num(reg.intercept) << ", R^2 "
          << num(reg.r2) << " (n=" << reg.n << ")\n";
  ctx.out << "wrote " << (dir / "regression.csv").string() << "\n";
}

struct CheckArgs {
  std::string model;
  std::string layer;
  std::string vars;
  std::string module;
  std::string clusters;
};

std::vector<Variable> selected_variables(const CgmGraph& g, const CheckArgs& a) {
  if (!a.vars.empty()) return g.parse_variables(split_specs(a.vars));
  const auto& layer = pick_layer(g, a.layer);
  if (a.module.empty()) return layer.variables;
  return ModuleSel::of_layer(layer, resolve_module(a.module, layer, a.clusters)).channels;
}

void cmd_check_layer(const Context& ctx, const CheckArgs& a) {
  const auto g = io::load_model(a.model);
  const auto vars = selected_variables(g, a);
  const auto res = g.is_layer(vars);
  ctx.out << "layer check on " << vars.size() << " variables: " << status_name(res.status) << "\n";
  if (!res.witness.empty()) {
    ctx.out << "unblocked path:";
    for (std::size_t i = 0; i < res.witness.size(); ++i) ctx.out << (i ? " -> " : " ") << res.witness[i];
    ctx.out << "\n";
  }
  if (res.removable) ctx.out << "removable without losing separation: " << g.label(*res.removable) << "\n";
}

void cmd_check_ancestors(const Context& ctx, const CheckArgs& a) {
  const auto g = io::load_model(a.model);
  const auto vars = selected_variables(g, a);
  ctx.out << "latent ancestors of " << vars.size() << " variables: " << join_latents(g.latent_ancestors(vars))
          << "\n";
  if (a.vars.empty() && !a.module.empty()) {
    const auto& layer = pick_layer(g, a.layer);
    ctx.out << "shares a latent ancestor with the rest of layer '" << layer.name
            << "': " << (g.shares_latent_ancestor(vars, layer) ? "yes" : "no") << "\n";
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal generative model analysis: interventions, influence maps and module discovery.",
               kToolName};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file with default values for any long flag");
  app.set_version_flag("--version", std::string(kToolVersion));

  Context ctx{out, err, 0, 0, {}};
  app.add_option("--seed", ctx.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--workers", ctx.workers, "Worker threads (0 = all cores)")->capture_default_str();

  MakeModelArgs mm;
  auto* make = app.add_subcommand("make-model", "Write a seeded, toy or planted generator");
  make->add_option("--arch", mm.arch, "vae_celeba, gan_celeba, vae_cifar, gan_cifar, toy_linear, toy_dag or planted")
      ->required();
  make->add_option("--out", mm.out, "Manifest path")->required();
  make->add_option("--blob", mm.blob, "Weight blob path (default: manifest with .cgmb)");
  make->add_option("--partition", mm.partition, "Planted only: ground-truth partition CSV path");
  make->add_option("--blocks", mm.blocks, "Planted only: number of blocks")->capture_default_str();
  make->add_option("--latents", mm.latents, "Planted only: latents per block")->capture_default_str();
  make->add_option("--channels", mm.channels, "Planted only: channels per block")->capture_default_str();
  make->add_option("--image", mm.image, "Planted only: image side")->capture_default_str();

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "Sample outputs from a model");
  gen->add_option("--model", ga.model, "Manifest path")->required();
  gen->add_option("--out-dir", ga.out_dir, "Output directory")->required();
  gen->add_option("--n", ga.n, "Number of samples")->capture_default_str();

  HybridArgs ha;
  auto* hyb = app.add_subcommand("hybrid", "Hybridize sample pairs on a module");
  hyb->add_option("--model", ha.model, "Manifest path")->required();
  hyb->add_option("--layer", ha.layer, "Layer name (default: first layer)");
  hyb->add_option("--module", ha.module, "all, channels:<list> or cluster:<k>")->required();
  hyb->add_option("--clusters", ha.clusters, "Cluster or partition CSV for cluster:<k>");
  hyb->add_option("--pairs", ha.pairs, "Number of (z1, z2) pairs")->capture_default_str();
  hyb->add_option("--out-dir", ha.out_dir, "Output directory")->required();

  EimArgs ea;
  auto* eim = app.add_subcommand("eim", "Elementary influence maps of every channel of a layer");
  eim->add_option("--model", ea.model, "Manifest path")->required();
  eim->add_option("--layer", ea.layer, "Layer name (default: first layer)");
  eim->add_option("--pairs", ea.pairs, "Monte-Carlo pairs per map")->capture_default_str();
  eim->add_option("--out-dir", ea.out_dir, "Output directory")->required();

  ClusterArgs ca;
  auto* clu = app.add_subcommand("cluster", "Preprocess, factorize and assign influence maps");
  clu->add_option("--eims", ca.eims, "EIMS file")->required();
  clu->add_option("--k", ca.k, "Number of clusters")->capture_default_str();
  clu->add_option("--method", ca.method, "nmf or kmeans")->capture_default_str();
  clu->add_option("--window", ca.window, "Smoothing window")->capture_default_str();
  clu->add_option("--percentile", ca.percentile, "Threshold percentile")->capture_default_str();
  clu->add_option("--out-dir", ca.out_dir, "Output directory")->required();

  StabilityArgs sa;
  auto* sta = app.add_subcommand("stability", "Clustering stability over a range of K");
  sta->add_option("--eims", sa.eims, "EIMS file")->required();
  sta->add_option("--k", sa.k, "K values: 3, 2..6 or 2,3,5")->capture_default_str();
  sta->add_option("--reps", sa.reps, "Repetitions per K")->capture_default_str();
  sta->add_option("--method", sa.method, "nmf, kmeans or both")->capture_default_str();
  sta->add_option("--window", sa.window, "Smoothing window")->capture_default_str();
  sta->add_option("--percentile", sa.percentile, "Threshold percentile")->capture_default_str();
  sta->add_option("--out", sa.out, "CSV path")->required();

  InfluenceStatsArgs ia;
  auto* ist = app.add_subcommand("influence-stats", "Influence of cluster modules and its regression on size");
  ist->add_option("--model", ia.model, "Manifest path")->required();
  ist->add_option("--layer", ia.layer, "Layer name (default: first layer)");
  ist->add_option("--clusters", ia.clusters, "Cluster or partition CSV")->required();
  ist->add_option("--pairs", ia.pairs, "Monte-Carlo pairs per module")->capture_default_str();
  ist->add_flag("--nested", ia.nested, "Also measure every channel prefix of each cluster");
  ist->add_option("--out-dir", ia.out_dir, "Output directory")->required();

  CheckArgs la;
  auto* chl = app.add_subcommand("check-layer", "Test whether variables form a layer");
  auto* cha = app.add_subcommand("check-ancestors", "Latent ancestors of a set of variables");
  for (auto* sub : {chl, cha}) {
    sub->add_option("--model", la.model, "Manifest path")->required();
    sub->add_option("--layer", la.layer, "Layer name (default: first layer)");
    sub->add_option("--vars", la.vars, "Comma-separated variables: node, node:c or node:a-b");
    sub->add_option("--module", la.module, "all, channels:<list> or cluster:<k> within --layer");
    sub->add_option("--clusters", la.clusters, "Cluster CSV for cluster:<k>");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  for (int i = 1; i < argc; ++i) ctx.command += (i > 1 ? " " : "") + std::string(argv[i]);

  try {
    if (*make) cmd_make_model(ctx, mm);
    else if (*gen) cmd_gen(ctx, ga);
    else if (*hyb) cmd_hybrid(ctx, ha);
    else if (*eim) cmd_eim(ctx, ea);
    else if (*clu) cmd_cluster(ctx, ca);
    else if (*sta) cmd_stability(ctx, sa);
    else if (*ist) cmd_influence_stats(ctx, ia);
    else if (*chl) cmd_check_layer(ctx, la);
    else if (*cha) cmd_check_ancestors(ctx, la);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cgm
