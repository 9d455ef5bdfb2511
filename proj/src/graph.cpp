#include "cgm/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <sstream>

#include "cgm/errors.hpp"
#include "cgm/log.hpp"

namespace cgm {

// ---------------------------------------------------------------------------
// LatentSpec
// ---------------------------------------------------------------------------

std::string_view distribution_name(LatentDistribution d) {
  return d == LatentDistribution::Uniform ? "uniform" : "truncated_normal";
}

LatentDistribution parse_distribution(std::string_view name) {
  if (name == "uniform") return LatentDistribution::Uniform;
  if (name == "truncated_normal") return LatentDistribution::TruncatedNormal;
  throw ConfigError("unknown latent distribution '" + std::string(name) + "'");
}

LatentSpec LatentSpec::uniform(std::size_t dim, double lo, double hi) {
  LatentSpec s;
  s.intervals.assign(dim, Interval{lo, hi});
  s.distribution = LatentDistribution::Uniform;
  return s;
}

LatentSpec LatentSpec::truncated_normal(std::size_t dim, double bound) {
  LatentSpec s;
  s.intervals.assign(dim, Interval{-bound, bound});
  s.distribution = LatentDistribution::TruncatedNormal;
  return s;
}

void LatentSpec::validate() const {
  if (intervals.empty()) throw ConfigError("latent space must have at least one coordinate");
  for (std::size_t k = 0; k < intervals.size(); ++k) {
    const auto& iv = intervals[k];
    if (!(iv.lo < iv.hi) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi))
      throw ConfigError("latent interval " + std::to_string(k) + " must be closed and bounded with lo < hi");
  }
}

Tensor LatentSpec::sample(Rng& rng) const {
  Tensor z({dim()});
  for (std::size_t k = 0; k < dim(); ++k) {
    const auto& iv = intervals[k];
    double v = 0.0;
    if (distribution == LatentDistribution::Uniform) {
      v = rng.uniform(iv.lo, iv.hi);
    } else {
      do {
        v = rng.normal();
      } while (v < iv.lo || v > iv.hi);
    }
    z[k] = static_cast<float>(v);
  }
  return z;
}

Tensor LatentSpec::midpoint() const {
  Tensor z({dim()});
  for (std::size_t k = 0; k < dim(); ++k) z[k] = static_cast<float>(0.5 * (intervals[k].lo + intervals[k].hi));
  return z;
}

Tensor LatentSpec::clamp(const Tensor& z, bool warn_on_clamp) const {
  if (z.rank() != 1 || z.size() != dim())
    throw DimensionError("latent vector has shape " + shape_to_string(z.shape()) + ", expected [" +
                         std::to_string(dim()) + "]");
  Tensor out = z;
  std::size_t moved = 0;
  for (std::size_t k = 0; k < dim(); ++k) {
    const float lo = static_cast<float>(intervals[k].lo), hi = static_cast<float>(intervals[k].hi);
    if (std::isnan(out[k])) {
      out[k] = static_cast<float>(0.5 * (intervals[k].lo + intervals[k].hi));
      ++moved;
    } else if (out[k] < lo) {
      out[k] = lo;
      ++moved;
    } else if (out[k] > hi) {
      out[k] = hi;
      ++moved;
    }
  }
  if (moved && warn_on_clamp)
    warn(std::to_string(moved) + " latent coordinate(s) outside the declared domain were clamped");
  return out;
}

// ---------------------------------------------------------------------------
// Ops and parent references
// ---------------------------------------------------------------------------

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Linear: return "linear";
    case OpKind::ConvTranspose2d: return "conv_transpose2d";
    case OpKind::BatchNorm: return "batchnorm";
    case OpKind::Activation: return "activation";
    case OpKind::Add: return "add";
    case OpKind::Mask: return "mask";
  }
  return "?";
}

OpKind parse_op(std::string_view name) {
  for (auto op : {OpKind::Linear, OpKind::ConvTranspose2d, OpKind::BatchNorm, OpKind::Activation, OpKind::Add,
                  OpKind::Mask})
    if (op_name(op) == name) return op;
  throw ConfigError("unknown op kind '" + std::string(name) + "'");
}

namespace {

std::size_t parse_index(std::string_view text, std::string_view context) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("invalid index '" + std::string(text) + "' in '" + std::string(context) + "'");
  return value;
}

std::pair<std::size_t, std::size_t> parse_range(std::string_view text, std::string_view context) {
  const auto dash = text.find('-');
  if (dash == std::string_view::npos) {
    const auto i = parse_index(text, context);
    return {i, i};
  }
  const auto a = parse_index(text.substr(0, dash), context);
  const auto b = parse_index(text.substr(dash + 1), context);
  if (b < a) throw ConfigError("empty range in '" + std::string(context) + "'");
  return {a, b};
}

bool is_latent_token(std::string_view id) { return id == "z" || id.starts_with("z:"); }

}  // namespace

ParentRef ParentRef::parse(std::string_view text) {
  if (text == "z") {
    ParentRef p;
    p.kind = Kind::Latent;
    p.all_latents = true;
    return p;
  }
  if (text.starts_with("z:")) {
    auto [a, b] = parse_range(text.substr(2), text);
    return latent_range(a, b);
  }
  if (text.empty()) throw ConfigError("empty parent reference");
  return of(std::string(text));
}

ParentRef ParentRef::latent_range(std::size_t first, std::size_t last) {
  ParentRef p;
  p.kind = Kind::Latent;
  p.first = first;
  p.last = last;
  return p;
}

ParentRef ParentRef::of(std::string node) {
  ParentRef p;
  p.kind = Kind::Node;
  p.node = std::move(node);
  return p;
}

std::string ParentRef::to_string() const {
  if (kind == Kind::Node) return node;
  if (all_latents) return "z";
  if (first == last) return "z:" + std::to_string(first);
  return "z:" + std::to_string(first) + "-" + std::to_string(last);
}

std::string_view status_name(LayerCheck::Status s) {
  switch (s) {
    case LayerCheck::Status::Yes: return "yes";
    case LayerCheck::Status::No: return "no";
    case LayerCheck::Status::NotMinimal: return "yes_but_not_minimal";
  }
  return "?";
}

Tensor Activations::channel(std::size_t node, std::size_t c) const {
  const Tensor& t = values.at(node);
  const std::size_t h = t.dim(2), w = t.dim(3);
  const auto begin = t.data().begin() + static_cast<std::ptrdiff_t>(c * h * w);
  return Tensor({h, w}, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(h * w)));
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

struct CgmGraph::Structure {
  GraphDescription desc;
  WeightStore weights;
  std::map<std::string, std::size_t, std::less<>> index;
  std::vector<Shape> shapes;
  std::vector<std::size_t> topo;
  std::vector<std::vector<std::size_t>> node_children;
  std::size_t output = 0;

  // Channel-level graph. Vertices: latents [0,K), then one per (node, channel),
  // then the sink.
  std::size_t latent_count = 0;
  std::vector<std::size_t> vertex_offset;
  std::size_t sink = 0;
  std::vector<std::vector<std::size_t>> v_children;
  std::vector<std::vector<std::size_t>> v_parents;
  std::vector<std::pair<std::size_t, std::size_t>> vertex_var;  // vertex -> (node, channel)

  const Tensor& weight(std::size_t node, const std::string& role) const {
    return weights.at(desc.nodes[node].weights.at(role));
  }
  const Tensor* optional_weight(std::size_t node, const std::string& role) const {
    const auto& w = desc.nodes[node].weights;
    auto it = w.find(role);
    return it == w.end() ? nullptr : &weights.at(it->second);
  }
  std::size_t vertex(std::size_t node, std::size_t c) const { return latent_count + vertex_offset[node] + c; }
};

namespace {

using Structure = CgmGraph::Structure;

std::size_t latent_first(const ParentRef& p) { return p.all_latents ? 0 : p.first; }
std::size_t latent_last(const ParentRef& p, std::size_t k) { return p.all_latents ? k - 1 : p.last; }

// Node-level checks: ids, parents, latent usage, acyclicity, sinks.
void check_structure(Structure& s) {
  const auto& desc = s.desc;
  const std::size_t k = desc.latent.dim();
  s.index.clear();
  for (std::size_t i = 0; i < desc.nodes.size(); ++i) {
    const auto& id = desc.nodes[i].id;
    if (id.empty() || is_latent_token(id))
      throw GraphError(GraphErrorKind::DuplicateId, "invalid node id '" + id + "'");
    if (!s.index.emplace(id, i).second)
      throw GraphError(GraphErrorKind::DuplicateId, "duplicate node id '" + id + "'");
  }
  if (desc.nodes.empty()) throw GraphError(GraphErrorKind::MissingParent, "graph has no structural equations");

  const std::size_t n = desc.nodes.size();
  s.node_children.assign(n, {});
  std::vector<std::size_t> indegree(n, 0);
  std::vector<bool> latent_used(k, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = desc.nodes[i];
    if (node.parents.empty())
      throw GraphError(GraphErrorKind::MissingParent, "node '" + node.id + "' has no parents");
    for (const auto& p : node.parents) {
      if (p.kind == ParentRef::Kind::Latent) {
        const auto first = latent_first(p), last = p.all_latents ? k - 1 : p.last;
        if (p.all_latents ? k == 0 : last >= k)
          throw GraphError(GraphErrorKind::LatentMismatch, "node '" + node.id + "' references latent " +
                                                               p.to_string() + " but the model declares " +
                                                               std::to_string(k) + " latent coordinates");
        for (std::size_t j = first; j <= last; ++j) latent_used[j] = true;
      } else {
        auto it = s.index.find(p.node);
        if (it == s.index.end())
          throw GraphError(GraphErrorKind::MissingParent,
                           "node '" + node.id + "' references missing parent '" + p.node + "'");
        s.node_children[it->second].push_back(i);
        ++indegree[i];
      }
    }
  }
  for (std::size_t j = 0; j < k; ++j)
    if (!latent_used[j])
      throw GraphError(GraphErrorKind::LatentMismatch,
                       "latent coordinate " + std::to_string(j) + " is not a source of any structural equation");

  // Kahn's algorithm, ties broken by declaration order.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  s.topo.clear();
  while (!ready.empty()) {
    const auto i = ready.top();
    ready.pop();
    s.topo.push_back(i);
    for (auto c : s.node_children[i])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (s.topo.size() != n) {
    std::string names;
    for (std::size_t i = 0; i < n; ++i)
      if (indegree[i] > 0) names += (names.empty() ? "" : ", ") + desc.nodes[i].id;
    throw GraphError(GraphErrorKind::Cycle, "cycle detected among nodes: " + names);
  }

  auto out = s.index.find(desc.output);
  if (out == s.index.end())
    throw GraphError(GraphErrorKind::MissingParent, "output node '" + desc.output + "' does not exist");
  s.output = out->second;
  std::vector<std::string> sinks;
  for (std::size_t i = 0; i < n; ++i)
    if (s.node_children[i].empty()) sinks.push_back(desc.nodes[i].id);
  if (!s.node_children[s.output].empty() || sinks.size() != 1) {
    std::string names;
    for (const auto& id : sinks) names += (names.empty() ? "" : ", ") + id;
    throw GraphError(GraphErrorKind::MultipleSinks,
                     "output '" + desc.output + "' must be the only sink; sinks found: " + names);
  }

  // Every node must have a latent ancestor (the output is reachable from every
  // node because it is the only sink of a DAG).
  std::vector<bool> from_latent(n, false);
  for (auto i : s.topo) {
    for (const auto& p : desc.nodes[i].parents) {
      if (p.kind == ParentRef::Kind::Latent || from_latent[s.index.at(p.node)]) from_latent[i] = true;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!from_latent[i])
      throw GraphError(GraphErrorKind::Disconnected,
                       "node '" + desc.nodes[i].id + "' is not on any path from a latent source");
}

const Tensor& require_weight(const Structure& s, std::size_t node, const std::string& role) {
  const auto& spec = s.desc.nodes[node];
  auto it = spec.weights.find(role);
  if (it == spec.weights.end())
    throw FormatError(FormatErrorKind::Resolution,
                      "node '" + spec.id + "' (" + std::string(op_name(spec.op)) + ") needs a '" + role + "' weight");
  auto w = s.weights.find(it->second);
  if (w == s.weights.end())
    throw FormatError(FormatErrorKind::Resolution,
                      "weight '" + it->second + "' referenced by node '" + spec.id + "' is missing");
  return w->second;
}

void expect_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    throw DimensionError(what + " has shape " + shape_to_string(t.shape()) + ", expected " +
                         shape_to_string(expected));
}

std::size_t single_node_parent(const Structure& s, std::size_t i) {
  const auto& spec = s.desc.nodes[i];
  if (spec.parents.size() != 1 || spec.parents[0].kind != ParentRef::Kind::Node)
    throw ConfigError("node '" + spec.id + "' (" + std::string(op_name(spec.op)) + ") takes exactly one node parent");
  return s.index.at(spec.parents[0].node);
}

// Shape inference plus weight contracts, in topological order.
void infer_shapes(Structure& s) {
  const std::size_t k = s.desc.latent.dim();
  s.shapes.assign(s.desc.nodes.size(), {});
  for (auto i : s.topo) {
    const auto& spec = s.desc.nodes[i];
    const std::string where = "node '" + spec.id + "'";
    for (const auto& [role, name] : spec.weights) (void)require_weight(s, i, role);
    switch (spec.op) {
      case OpKind::Linear: {
        std::size_t in = 0;
        for (const auto& p : spec.parents)
          in += p.kind == ParentRef::Kind::Latent ? latent_last(p, k) - latent_first(p) + 1
                                                  : shape_numel(s.shapes[s.index.at(p.node)]);
        if (spec.out_shape.size() != 3)
          throw ConfigError(where + ": linear output shape must be [C,H,W]");
        const std::size_t out = shape_numel(spec.out_shape);
        if (out == 0) throw ConfigError(where + ": empty output shape");
        expect_shape(require_weight(s, i, "weight"), {out, in}, where + " weight");
        if (auto* b = s.optional_weight(i, "bias")) expect_shape(*b, {out}, where + " bias");
        s.shapes[i] = {1, spec.out_shape[0], spec.out_shape[1], spec.out_shape[2]};
        break;
      }
      case OpKind::ConvTranspose2d: {
        const auto& in = s.shapes[single_node_parent(s, i)];
        const auto& w = require_weight(s, i, "weight");
        if (w.rank() != 4 || w.dim(0) != in[1])
          throw DimensionError(where + " kernel " + shape_to_string(w.shape()) + " does not match input " +
                               shape_to_string(in));
        if (spec.conv.stride < 1) throw ConfigError(where + ": stride must be >= 1");
        if (auto* b = s.optional_weight(i, "bias")) expect_shape(*b, {w.dim(1)}, where + " bias");
        s.shapes[i] = {1, w.dim(1), kernels::conv_transpose_out_size(in[2], w.dim(2), spec.conv),
                       kernels::conv_transpose_out_size(in[3], w.dim(3), spec.conv)};
        break;
      }
      case OpKind::BatchNorm: {
        const auto& in = s.shapes[single_node_parent(s, i)];
        for (const char* role : {"mean", "var", "gamma", "beta"})
          expect_shape(require_weight(s, i, role), {in[1]}, where + " " + role);
        for (float v : require_weight(s, i, "var").values())
          if (v < 0.0f) throw ConfigError(where + ": negative variance");
        s.shapes[i] = in;
        break;
      }
      case OpKind::Activation:
        s.shapes[i] = s.shapes[single_node_parent(s, i)];
        break;
      case OpKind::Add: {
        for (const auto& p : spec.parents)
          if (p.kind != ParentRef::Kind::Node) throw ConfigError(where + ": add takes node parents only");
        s.shapes[i] = s.shapes[s.index.at(spec.parents[0].node)];
        for (const auto& p : spec.parents)
          if (s.shapes[s.index.at(p.node)] != s.shapes[i])
            throw DimensionError(where + ": add operands have different shapes");
        break;
      }
      case OpKind::Mask: {
        const auto& in = s.shapes[single_node_parent(s, i)];
        expect_shape(require_weight(s, i, "mask"), {in[2], in[3]}, where + " mask");
        s.shapes[i] = in;
        break;
      }
    }
  }
}

bool any_nonzero(const float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] != 0.0f) return true;
  return false;
}

// Channel-level dependencies; weights that are exactly zero carry no edge.
void build_channel_graph(Structure& s) {
  const std::size_t k = s.desc.latent.dim();
  const std::size_t n = s.desc.nodes.size();
  s.latent_count = k;
  s.vertex_offset.assign(n, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s.vertex_offset[i] = total;
    total += s.shapes[i][1];
  }
  s.sink = k + total;
  s.v_children.assign(s.sink + 1, {});
  s.v_parents.assign(s.sink + 1, {});
  s.vertex_var.assign(s.sink + 1, {0, 0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < s.shapes[i][1]; ++c) s.vertex_var[s.vertex(i, c)] = {i, c};

  auto edge = [&](std::size_t from, std::size_t to) {
    s.v_children[from].push_back(to);
    s.v_parents[to].push_back(from);
  };

  for (auto i : s.topo) {
    const auto& spec = s.desc.nodes[i];
    const std::size_t channels = s.shapes[i][1];
    switch (spec.op) {
      case OpKind::Linear: {
        // Input element -> source vertex.
        std::vector<std::size_t> source;
        for (const auto& p : spec.parents) {
          if (p.kind == ParentRef::Kind::Latent) {
            for (auto j = latent_first(p); j <= latent_last(p, k); ++j) source.push_back(j);
          } else {
            const auto pi = s.index.at(p.node);
            const auto& ps = s.shapes[pi];
            for (std::size_t c = 0; c < ps[1]; ++c)
              for (std::size_t e = 0; e < ps[2] * ps[3]; ++e) source.push_back(s.vertex(pi, c));
          }
        }
        const auto& w = s.weight(i, "weight");
        const std::size_t in = w.dim(1), plane = s.shapes[i][2] * s.shapes[i][3];
        for (std::size_t c = 0; c < channels; ++c) {
          std::vector<bool> linked(s.sink + 1, false);
          for (std::size_t f = c * plane; f < (c + 1) * plane; ++f)
            for (std::size_t j = 0; j < in; ++j)
              if (w[f * in + j] != 0.0f) linked[source[j]] = true;
          for (std::size_t v = 0; v < s.sink; ++v)
            if (linked[v]) edge(v, s.vertex(i, c));
        }
        break;
      }
      case OpKind::ConvTranspose2d: {
        const auto pi = s.index.at(spec.parents[0].node);
        const auto& w = s.weight(i, "weight");
        const std::size_t cin = w.dim(0), cout = w.dim(1), taps = w.dim(2) * w.dim(3);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ci = 0; ci < cin; ++ci)
            if (any_nonzero(w.data().data() + (ci * cout + co) * taps, taps)) edge(s.vertex(pi, ci), s.vertex(i, co));
        break;
      }
      case OpKind::BatchNorm:
      case OpKind::Activation:
      case OpKind::Mask:
      case OpKind::Add:
        for (const auto& p : spec.parents) {
          const auto pi = s.index.at(p.node);
          for (std::size_t c = 0; c < channels; ++c) edge(s.vertex(pi, c), s.vertex(i, c));
        }
        break;
    }
  }
  for (std::size_t c = 0; c < s.shapes[s.output][1]; ++c) edge(s.vertex(s.output, c), s.sink);
}

void check_layers(const CgmGraph& g, const Structure& s) {
  std::set<std::string> names;
  for (const auto& layer : s.desc.layers) {
    if (!names.insert(layer.name).second) throw ConfigError("duplicate layer name '" + layer.name + "'");
    std::set<Variable> seen;
    for (const auto& v : layer.variables) {
      g.check_variable(v);
      if (!seen.insert(v).second)
        throw ConfigError("layer '" + layer.name + "' lists variable " + g.label(v) + " twice");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// CgmGraph
// ---------------------------------------------------------------------------

CgmGraph CgmGraph::build(GraphDescription description, WeightStore weights) {
  description.latent.validate();
  auto s = std::make_shared<Structure>();
  s->desc = std::move(description);
  s->weights = std::move(weights);
  check_structure(*s);
  infer_shapes(*s);
  build_channel_graph(*s);
  CgmGraph g(s);
  check_layers(g, *s);
  return g;
}

void CgmGraph::validate() const {
  Structure copy = *s_;
  check_structure(copy);
}

const GraphDescription& CgmGraph::description() const { return s_->desc; }
const WeightStore& CgmGraph::weights() const { return s_->weights; }
std::size_t CgmGraph::node_count() const { return s_->desc.nodes.size(); }
const NodeSpec& CgmGraph::node(std::size_t index) const { return s_->desc.nodes.at(index); }
const Shape& CgmGraph::node_shape(std::size_t index) const { return s_->shapes.at(index); }
std::size_t CgmGraph::output_index() const { return s_->output; }
const std::vector<std::size_t>& CgmGraph::topological_order() const { return s_->topo; }

std::size_t CgmGraph::node_index(std::string_view id) const {
  auto it = s_->index.find(id);
  if (it == s_->index.end()) throw GraphError(GraphErrorKind::UnknownVariable, "unknown node '" + std::string(id) + "'");
  return it->second;
}

const LayerSel& CgmGraph::layer(std::string_view name) const {
  for (const auto& l : s_->desc.layers)
    if (l.name == name) return l;
  throw ConfigError("unknown layer '" + std::string(name) + "'");
}

bool CgmGraph::has_layer(std::string_view name) const {
  return std::any_of(s_->desc.layers.begin(), s_->desc.layers.end(), [&](const auto& l) { return l.name == name; });
}

void CgmGraph::check_variable(const Variable& v) const {
  const auto i = node_index(v.node);
  if (v.channel >= s_->shapes[i][1])
    throw GraphError(GraphErrorKind::UnknownVariable, "node '" + v.node + "' has " +
                                                          std::to_string(s_->shapes[i][1]) + " channels, no channel " +
                                                          std::to_string(v.channel));
}

std::vector<Variable> CgmGraph::parse_variables(const std::vector<std::string>& specs) const {
  std::vector<Variable> out;
  for (const auto& spec : specs) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos) {
      const auto i = node_index(spec);
      for (std::size_t c = 0; c < s_->shapes[i][1]; ++c) out.push_back({spec, c});
      continue;
    }
    const std::string id = spec.substr(0, colon);
    auto [a, b] = parse_range(std::string_view(spec).substr(colon + 1), spec);
    for (auto c = a; c <= b; ++c) {
      Variable v{id, c};
      check_variable(v);
      out.push_back(v);
    }
  }
  return out;
}

std::string CgmGraph::label(const Variable& v) const {
  const auto i = node_index(v.node);
  if (s_->shapes[i][1] == 1) return v.node;
  return v.node + ":" + std::to_string(v.channel);
}

Shape CgmGraph::variable_shape(const Variable& v) const {
  const auto& sh = s_->shapes[node_index(v.node)];
  return {sh[2], sh[3]};
}

std::size_t CgmGraph::vertex_of(const Variable& v) const {
  check_variable(v);
  return s_->vertex(node_index(v.node), v.channel);
}

bool CgmGraph::overridden(std::size_t vertex) const {
  if (vertex < s_->latent_count || vertex >= s_->sink) return false;
  auto [node, c] = s_->vertex_var[vertex];
  auto it = overrides_.find(node);
  return it != overrides_.end() && it->second.count(c);
}

// -- evaluation --------------------------------------------------------------

Tensor CgmGraph::compute_node(std::size_t i, const std::vector<Tensor>& values, const Tensor& z) const {
  const auto& s = *s_;
  const auto& spec = s.desc.nodes[i];
  const std::size_t k = s.latent_count;
  switch (spec.op) {
    case OpKind::Linear: {
      std::vector<float> x;
      for (const auto& p : spec.parents) {
        if (p.kind == ParentRef::Kind::Latent) {
          for (auto j = latent_first(p); j <= latent_last(p, k); ++j) x.push_back(z[j]);
        } else {
          const auto& v = values[s.index.at(p.node)].values();
          x.insert(x.end(), v.begin(), v.end());
        }
      }
      const std::size_t in = x.size();
      Tensor y = kernels::matmul(s.weight(i, "weight"), Tensor({in, 1}, std::move(x)));
      if (const Tensor* b = s.optional_weight(i, "bias"))
        for (std::size_t f = 0; f < y.size(); ++f) y[f] += (*b)[f];
      return y.reshaped(s.shapes[i]);
    }
    case OpKind::ConvTranspose2d:
      return kernels::conv_transpose2d(values[s.index.at(spec.parents[0].node)], s.weight(i, "weight"), spec.conv,
                                       s.optional_weight(i, "bias"));
    case OpKind::BatchNorm:
      return kernels::batchnorm_infer(values[s.index.at(spec.parents[0].node)], s.weight(i, "mean"),
                                      s.weight(i, "var"), s.weight(i, "gamma"), s.weight(i, "beta"), spec.eps);
    case OpKind::Activation:
      return kernels::apply_activation(values[s.index.at(spec.parents[0].node)], spec.activation);
    case OpKind::Add: {
      Tensor out = values[s.index.at(spec.parents[0].node)];
      for (std::size_t p = 1; p < spec.parents.size(); ++p) {
        const auto& v = values[s.index.at(spec.parents[p].node)];
        for (std::size_t e = 0; e < out.size(); ++e) out[e] += v[e];
      }
      return out;
    }
    case OpKind::Mask: {
      Tensor out = values[s.index.at(spec.parents[0].node)];
      const auto& m = s.weight(i, "mask");
      const std::size_t plane = m.size();
      for (std::size_t e = 0; e < out.size(); ++e) out[e] *= m[e % plane];
      return out;
    }
  }
  throw ConfigError("unsupported op");
}

void CgmGraph::apply_overrides(std::size_t i, Tensor& value, const Overrides* extra) const {
  const std::size_t plane = value.dim(2) * value.dim(3);
  auto assign = [&](const Overrides& ov) {
    auto it = ov.find(i);
    if (it == ov.end()) return;
    for (const auto& [c, map] : it->second)
      std::copy(map.data().begin(), map.data().end(), value.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
  };
  assign(overrides_);
  if (extra) assign(*extra);
}

Activations CgmGraph::record(const Tensor& z) const {
  const Tensor zc = latent().clamp(z);
  Activations acts;
  acts.values.resize(node_count());
  acts.output_index = s_->output;
  acts.latent = zc;
  for (auto i : s_->topo) {
    acts.values[i] = compute_node(i, acts.values, zc);
    apply_overrides(i, acts.values[i], nullptr);
  }
  return acts;
}

Tensor CgmGraph::evaluate(const Tensor& z) const { return record(z).output(); }

Tensor CgmGraph::value_of(const Activations& acts, const Variable& v) const {
  check_variable(v);
  return acts.channel(node_index(v.node), v.channel);
}

namespace {
void check_override_shapes(const CgmGraph& g, const Overrides& ov) {
  for (const auto& [node, channels] : ov) {
    const auto& sh = g.node_shape(node);
    for (const auto& [c, map] : channels) {
      if (c >= sh[1])
        throw GraphError(GraphErrorKind::UnknownVariable,
                         "node '" + g.node(node).id + "' has no channel " + std::to_string(c));
      if (map.shape() != Shape{sh[2], sh[3]})
        throw DimensionError("value for " + g.label({g.node(node).id, c}) + " has shape " +
                             shape_to_string(map.shape()) + ", expected " + shape_to_string({sh[2], sh[3]}));
    }
  }
}
}  // namespace

Activations CgmGraph::propagate(const Activations& base, const Overrides& extra) const {
  check_override_shapes(*this, extra);
  if (base.values.size() != node_count()) throw DimensionError("activations do not belong to this graph");
  const std::size_t n = node_count();
  std::vector<bool> dirty(n, false);
  for (const auto& [node, _] : extra) dirty[node] = true;
  for (auto i : s_->topo)
    if (dirty[i])
      for (auto c : s_->node_children[i]) dirty[c] = true;

  Activations acts;
  acts.output_index = s_->output;
  acts.values.resize(n);
  acts.latent = base.latent;
  for (auto i : s_->topo) {
    if (!dirty[i]) {
      acts.values[i] = base.values[i];
      continue;
    }
    acts.values[i] = compute_node(i, acts.values, base.latent);
    apply_overrides(i, acts.values[i], &extra);
  }
  return acts;
}

CgmGraph CgmGraph::with_overrides(const Overrides& extra) const {
  check_override_shapes(*this, extra);
  CgmGraph g = *this;
  for (const auto& [node, channels] : extra)
    for (const auto& [c, map] : channels) g.overrides_[node][c] = map;
  return g;
}

Tensor CgmGraph::evaluate_from_layer(const LayerSel& layer, const std::vector<Tensor>& values) const {
  if (values.size() != layer.variables.size())
    throw DimensionError("layer '" + layer.name + "' has " + std::to_string(layer.variables.size()) +
                         " variables but " + std::to_string(values.size()) + " values were given");
  Overrides ov;
  for (std::size_t j = 0; j < values.size(); ++j) {
    const auto& v = layer.variables[j];
    const auto shape = variable_shape(v);
    if (values[j].shape() != shape)
      throw DimensionError("value for " + label(v) + " has shape " + shape_to_string(values[j].shape()) +
                           ", expected " + shape_to_string(shape));
    ov[node_index(v.node)][v.channel] = values[j];
  }
  if (is_layer(layer.variables).status == LayerCheck::Status::No)
    throw ValidationError("variables of '" + layer.name + "' do not intercept every latent-to-output path");

  // Nodes needed to reach the output; fully assigned nodes stop the search.
  const std::size_t n = node_count();
  std::vector<bool> needed(n, false);
  std::vector<std::size_t> stack{s_->output};
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    if (needed[i]) continue;
    needed[i] = true;
    auto it = ov.find(i);
    if (it != ov.end() && it->second.size() == s_->shapes[i][1]) continue;
    for (const auto& p : s_->desc.nodes[i].parents)
      if (p.kind == ParentRef::Kind::Node) stack.push_back(s_->index.at(p.node));
  }
  // Latent inputs of partially assigned nodes cannot reach the output; any
  // point of the domain gives the same result.
  const Tensor z = latent().midpoint();
  std::vector<Tensor> vals(n);
  for (auto i : s_->topo) {
    if (!needed[i]) continue;
    auto it = ov.find(i);
    if (it != ov.end() && it->second.size() == s_->shapes[i][1]) {
      vals[i] = Tensor(s_->shapes[i]);
    } else {
      vals[i] = compute_node(i, vals, z);
    }
    apply_overrides(i, vals[i], &ov);
  }
  return vals[s_->output];
}

// -- queries -----------------------------------------------------------------

namespace {

struct Search {
  std::vector<std::size_t> parent;
  std::size_t reached = SIZE_MAX;
};

}  // namespace

LayerCheck CgmGraph::is_layer(const std::vector<Variable>& candidate) const {
  std::vector<bool> blocked(s_->sink + 1, false);
  std::vector<std::size_t> verts;
  for (const auto& v : candidate) {
    const auto vx = vertex_of(v);
    if (blocked[vx]) throw ValidationError("variable " + label(v) + " listed twice");
    blocked[vx] = true;
    verts.push_back(vx);
  }

  // BFS from all latents to the sink avoiding blocked vertices; edges into
  // overridden vertices are cut.
  auto search = [&](const std::vector<bool>& block) {
    Search r;
    r.parent.assign(s_->sink + 1, SIZE_MAX);
    std::vector<bool> seen(s_->sink + 1, false);
    std::deque<std::size_t> q;
    for (std::size_t k = 0; k < s_->latent_count; ++k) {
      seen[k] = true;
      q.push_back(k);
    }
    while (!q.empty()) {
      const auto u = q.front();
      q.pop_front();
      for (auto w : s_->v_children[u]) {
        if (seen[w] || block[w] || overridden(w)) continue;
        seen[w] = true;
        r.parent[w] = u;
        if (w == s_->sink) {
          r.reached = w;
          return r;
        }
        q.push_back(w);
      }
    }
    return r;
  };

  LayerCheck out;
  auto first = search(blocked);
  if (first.reached != SIZE_MAX) {
    out.status = LayerCheck::Status::No;
    std::vector<std::string> path;
    for (auto u = first.parent[s_->sink]; u != SIZE_MAX; u = first.parent[u]) {
      if (u < s_->latent_count) {
        path.push_back("z:" + std::to_string(u));
        break;
      }
      auto [node, c] = s_->vertex_var[u];
      path.push_back(label({s_->desc.nodes[node].id, c}));
    }
    out.witness.assign(path.rbegin(), path.rend());
    return out;
  }
  for (std::size_t j = 0; j < verts.size(); ++j) {
    blocked[verts[j]] = false;
    const bool still = search(blocked).reached == SIZE_MAX;
    blocked[verts[j]] = true;
    if (still) {
      out.status = LayerCheck::Status::NotMinimal;
      out.removable = candidate[j];
      return out;
    }
  }
  return out;
}

std::set<std::size_t> CgmGraph::latent_ancestors(const std::vector<Variable>& vars) const {
  std::set<std::size_t> result;
  std::vector<bool> seen(s_->sink + 1, false);
  std::vector<std::size_t> stack;
  for (const auto& v : vars) {
    const auto vx = vertex_of(v);
    if (!seen[vx]) {
      seen[vx] = true;
      stack.push_back(vx);
    }
  }
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    if (u < s_->latent_count) {
      result.insert(u);
      continue;
    }
    if (overridden(u)) continue;
    for (auto p : s_->v_parents[u])
      if (!seen[p]) {
        seen[p] = true;
        stack.push_back(p);
      }
  }
  return result;
}

bool CgmGraph::shares_latent_ancestor(const std::vector<Variable>& module, const LayerSel& layer) const {
  std::set<Variable> in_layer(layer.variables.begin(), layer.variables.end());
  std::set<Variable> in_module;
  for (const auto& v : module) {
    if (!in_layer.count(v))
      throw ValidationError("variable " + label(v) + " is not part of layer '" + layer.name + "'");
    in_module.insert(v);
  }
  std::vector<Variable> rest;
  for (const auto& v : layer.variables)
    if (!in_module.count(v)) rest.push_back(v);
  const auto a = latent_ancestors(module);
  const auto b = latent_ancestors(rest);
  return std::any_of(a.begin(), a.end(), [&](std::size_t k) { return b.count(k) > 0; });
}

std::set<Variable> CgmGraph::descendants(const std::vector<Variable>& vars) const {
  std::set<Variable> out;
  std::vector<bool> seen(s_->sink + 1, false);
  std::vector<std::size_t> stack;
  for (const auto& v : vars) {
    const auto vx = vertex_of(v);
    if (!seen[vx]) {
      seen[vx] = true;
      stack.push_back(vx);
    }
  }
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    if (u == s_->sink) continue;
    auto [node, c] = s_->vertex_var[u];
    out.insert({s_->desc.nodes[node].id, c});
    for (auto w : s_->v_children[u])
      if (!seen[w] && !overridden(w)) {
        seen[w] = true;
        stack.push_back(w);
      }
  }
  return out;
}

bool CgmGraph::output_depends_on_latents() const { return is_layer({}).status == LayerCheck::Status::No; }

InjectivityProbe probe_injectivity(const CgmGraph& g, std::size_t samples, std::uint64_t seed, double tolerance) {
  if (samples < 2) throw ConfigError("injectivity probe needs at least two samples");
  Rng rng = Rng::stream(seed, "injectivity-probe");
  std::vector<Tensor> zs, ys;
  for (std::size_t i = 0; i < samples; ++i) {
    zs.push_back(g.latent().sample(rng));
    ys.push_back(g.evaluate(zs.back()));
  }
  auto dist = [](const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double x = static_cast<double>(a[i]) - b[i];
      d += x * x;
    }
    return std::sqrt(d);
  };
  InjectivityProbe r;
  r.samples = samples;
  r.min_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = i + 1; j < samples; ++j) {
      const double dz = dist(zs[i], zs[j]);
      if (dz == 0.0) continue;
      const double dy = dist(ys[i], ys[j]);
      r.min_ratio = std::min(r.min_ratio, dy / dz);
      if (dy <= tolerance) ++r.collisions;
    }
  return r;
}

}  // namespace cgm
