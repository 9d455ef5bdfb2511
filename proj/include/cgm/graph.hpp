#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cgm/kernels.hpp"
#include "cgm/rng.hpp"
#include "cgm/tensor.hpp"

namespace cgm {

// ---------------------------------------------------------------------------
// Latent space
// ---------------------------------------------------------------------------

enum class LatentDistribution { Uniform, TruncatedNormal };

std::string_view distribution_name(LatentDistribution d);
LatentDistribution parse_distribution(std::string_view name);

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
};

/// Compact latent domain: a product of closed bounded intervals.
struct LatentSpec {
  std::vector<Interval> intervals;
  LatentDistribution distribution = LatentDistribution::Uniform;

  static LatentSpec uniform(std::size_t dim, double lo = -1.0, double hi = 1.0);
  /// Standard normal truncated to [-3, 3] per coordinate.
  static LatentSpec truncated_normal(std::size_t dim, double bound = 3.0);

  std::size_t dim() const noexcept { return intervals.size(); }
  void validate() const;

  /// One draw from the declared distribution (rejection sampling for the
  /// truncated normal).
  Tensor sample(Rng& rng) const;
  Tensor midpoint() const;
  /// Coordinates outside their interval are clamped; emits a warning if
  /// `warn_on_clamp` and anything moved.
  Tensor clamp(const Tensor& z, bool warn_on_clamp = true) const;
};

// ---------------------------------------------------------------------------
// Structural equations
// ---------------------------------------------------------------------------

enum class OpKind { Linear, ConvTranspose2d, BatchNorm, Activation, Add, Mask };

std::string_view op_name(OpKind op);
OpKind parse_op(std::string_view name);

/// Parent of a structural equation: a whole node, or an inclusive range of
/// latent coordinates. Text form: "node_id", "z" (all latents), "z:3",
/// "z:0-3".
struct ParentRef {
  enum class Kind { Node, Latent };
  Kind kind = Kind::Node;
  std::string node;
  std::size_t first = 0;
  std::size_t last = 0;
  bool all_latents = false;

  static ParentRef parse(std::string_view text);
  static ParentRef latent_range(std::size_t first, std::size_t last);
  static ParentRef of(std::string node);
  std::string to_string() const;
};

struct NodeSpec {
  std::string id;
  OpKind op = OpKind::Activation;
  std::vector<ParentRef> parents;
  /// Role ("weight", "bias", "mean", ...) -> weight-store name.
  std::map<std::string, std::string> weights;

  kernels::Activation activation = kernels::Activation::Identity;
  kernels::ConvTransposeParams conv;
  float eps = 1e-5f;
  /// Linear only: output reshaped to [C,H,W].
  Shape out_shape;
};

/// One endogenous variable: a single channel's 2-D activation map.
struct Variable {
  std::string node;
  std::size_t channel = 0;

  auto operator<=>(const Variable&) const = default;
};

struct LayerSel {
  std::string name;
  std::vector<Variable> variables;
};

struct GraphDescription {
  LatentSpec latent;
  std::vector<NodeSpec> nodes;
  std::string output;
  std::vector<LayerSel> layers;
};

using WeightStore = std::map<std::string, Tensor>;

/// Constant assignments: node index -> channel -> [H,W] map.
using Overrides = std::map<std::size_t, std::map<std::size_t, Tensor>>;

/// Values of every node produced by one forward pass ([1,C,H,W] each). Nodes
/// that were not needed are left empty.
struct Activations {
  std::vector<Tensor> values;
  std::size_t output_index = 0;
  /// Clamped latent vector the pass was computed from.
  Tensor latent;

  const Tensor& output() const { return values.at(output_index); }
  Tensor channel(std::size_t node, std::size_t c) const;
};

struct LayerCheck {
  enum class Status { Yes, No, NotMinimal };
  Status status = Status::Yes;
  /// For `No`: an unblocked latent -> output path, as variable labels.
  std::vector<std::string> witness;
  /// For `NotMinimal`: an element whose removal keeps the separator property.
  std::optional<Variable> removable;
};

std::string_view status_name(LayerCheck::Status s);

// ---------------------------------------------------------------------------
// CgmGraph
// ---------------------------------------------------------------------------

/// A validated causal generative model: a DAG of deterministic structural
/// equations with K latent sources and a single output sink. Immutable after
/// `build`; copies share structure and weights. An intervened graph is the
/// same structure plus a set of constant channel assignments.
class CgmGraph {
 public:
  /// Validates every graph invariant; throws GraphError (cycle, missing
  /// parent, multiple sinks, latent mismatch, disconnected), FormatError for
  /// unresolved weights, DimensionError / ConfigError for op contracts.
  static CgmGraph build(GraphDescription description, WeightStore weights);

  const GraphDescription& description() const;
  const WeightStore& weights() const;
  const LatentSpec& latent() const { return description().latent; }
  std::size_t latent_dim() const { return latent().dim(); }

  std::size_t node_count() const;
  std::size_t node_index(std::string_view id) const;
  const NodeSpec& node(std::size_t index) const;
  /// [1,C,H,W] shape of a node's value.
  const Shape& node_shape(std::size_t index) const;
  std::size_t output_index() const;
  const std::vector<std::size_t>& topological_order() const;

  const std::vector<LayerSel>& layers() const { return description().layers; }
  const LayerSel& layer(std::string_view name) const;
  bool has_layer(std::string_view name) const;

  /// Parses "node", "node:c" or "node:a-b" into variables.
  std::vector<Variable> parse_variables(const std::vector<std::string>& specs) const;
  std::string label(const Variable& v) const;
  /// [H,W] shape of a variable.
  Shape variable_shape(const Variable& v) const;
  void check_variable(const Variable& v) const;

  // -- evaluation ----------------------------------------------------------
  Tensor evaluate(const Tensor& z) const;
  Activations record(const Tensor& z) const;
  Tensor value_of(const Activations& acts, const Variable& v) const;

  /// Output computed from layer values only; upstream nodes are skipped.
  /// Throws ValidationError if the variables do not intercept every
  /// latent-to-output path.
  Tensor evaluate_from_layer(const LayerSel& layer, const std::vector<Tensor>& values) const;

  /// Re-evaluates only what lies downstream of `extra` on top of a recorded
  /// pass of this graph. Bit-identical to a full evaluation of the graph with
  /// `extra` added to its constant assignments.
  Activations propagate(const Activations& base, const Overrides& extra) const;

  // -- graph queries -------------------------------------------------------
  LayerCheck is_layer(const std::vector<Variable>& candidate) const;
  std::set<std::size_t> latent_ancestors(const std::vector<Variable>& vars) const;
  /// True iff ancestors(module) and ancestors(layer \ module) intersect.
  bool shares_latent_ancestor(const std::vector<Variable>& module, const LayerSel& layer) const;
  /// Endogenous variables reachable from `vars` (including them).
  std::set<Variable> descendants(const std::vector<Variable>& vars) const;
  /// True if some latent still has a directed path to the output.
  bool output_depends_on_latents() const;

  // -- interventions -------------------------------------------------------
  const Overrides& overrides() const noexcept { return overrides_; }
  bool is_intervened() const noexcept { return !overrides_.empty(); }
  CgmGraph with_overrides(const Overrides& extra) const;

  /// Re-runs the structural checks (acyclicity, single sink, latent usage).
  void validate() const;

  struct Structure;

 private:
  explicit CgmGraph(std::shared_ptr<const Structure> s) : s_(std::move(s)) {}

  Tensor compute_node(std::size_t index, const std::vector<Tensor>& values, const Tensor& z) const;
  void apply_overrides(std::size_t index, Tensor& value, const Overrides* extra) const;
  bool overridden(std::size_t vertex) const;
  std::size_t vertex_of(const Variable& v) const;

  std::shared_ptr<const Structure> s_;
  Overrides overrides_;
};

struct InjectivityProbe {
  std::size_t samples = 0;
  /// Smallest ||g(z) - g(z')|| / ||z - z'|| over all sampled pairs.
  double min_ratio = 0.0;
  /// Pairs with distinct latents whose outputs agree within the tolerance.
  std::size_t collisions = 0;
};

/// Sampling-based check for collisions of the latent-to-output map. A small
/// ratio or any collision is evidence against injectivity; a clean report
/// proves nothing.
InjectivityProbe probe_injectivity(const CgmGraph& g, std::size_t samples, std::uint64_t seed,
                                   double tolerance = 1e-6);

}  // namespace cgm
