#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cgm/influence.hpp"

namespace cgm {

/// Row-major matrix of doubles used by the factorization code.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }

  static Matrix from_stack(const EimStack& s);
  Matrix select_rows(const std::vector<std::size_t>& indices) const;
};

/// Frobenius norm of S - W*H.
double reconstruction_error(const Matrix& s, const Matrix& w, const Matrix& h);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// window x window box filter with edge replication.
Tensor box_smooth(const Tensor& map, std::size_t window);

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
float nearest_rank_percentile(std::span<const float> values, double percentile);

/// Smooths each map, then sets pixels strictly above the map's own percentile
/// to 1 and everything else to 0.
EimStack preprocess_maps(const EimStack& stack, std::size_t window = 3, double percentile = 75.0);

// ---------------------------------------------------------------------------
// Factorizations
// ---------------------------------------------------------------------------

struct NmfOptions {
  std::size_t iters = 500;
  double tol = 1e-5;
  std::uint64_t seed = 0;
};

struct NmfResult {
  Matrix w;  // n x K
  Matrix h;  // K x p
  /// Frobenius error after initialization and after every iteration.
  std::vector<double> error_history;
};

/// Multiplicative-update NMF (Lee & Seung) minimizing ||S - WH||_F.
/// Stops after `iters` iterations or when the relative error improvement
/// falls below `tol`. Initial factors are uniform on (0, 1].
NmfResult nmf(const Matrix& s, std::size_t k, const NmfOptions& opts = {});

struct KMeansOptions {
  std::size_t iters = 300;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Matrix centroids;  // K x p
  std::vector<std::size_t> labels;
  /// Inertia after each assignment step.
  std::vector<double> inertia_history;
};

/// Lloyd's algorithm with k-means++ seeding. A cluster that becomes empty is
/// re-seeded at the point farthest from its assigned centroid.
KMeansResult kmeans(const Matrix& s, std::size_t k, const KMeansOptions& opts = {});

enum class ClusterMethod { Nmf, KMeans };

std::string_view method_name(ClusterMethod m);
ClusterMethod parse_method(std::string_view name);

struct ClusterModel {
  ClusterMethod method = ClusterMethod::Nmf;
  std::size_t k = 0;
  /// NMF: nonnegative weights. k-means: negative squared distance to each
  /// centroid, so the best cluster is the row maximum for both methods.
  Matrix w;
  /// Templates (NMF rows of H) or centroids.
  Matrix h;
  std::vector<std::size_t> assignments;  // 0-based
};

struct ClusterOptions {
  NmfOptions nmf;
  KMeansOptions kmeans;
};

ClusterModel fit_clusters(const Matrix& s, std::size_t k, ClusterMethod method, const ClusterOptions& opts = {});

/// Row-wise argmax of W; ties go to the lowest cluster index.
std::vector<std::size_t> assign_clusters(const ClusterModel& model);

// ---------------------------------------------------------------------------
// Label matching and stability
// ---------------------------------------------------------------------------

struct LabelMatch {
  /// permutation[j] = label of `a` matched to label j of `b`.
  std::vector<std::size_t> permutation;
  double consistency = 0.0;
};

/// Relabels `b` to maximize agreement with `a` on `overlap`. Exhaustive over
/// permutations for k <= 8, Hungarian assignment otherwise.
LabelMatch match_labelings(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                           const std::vector<std::size_t>& overlap, std::size_t k);
LabelMatch match_labelings(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t k);

/// Maximum-weight perfect assignment on a square matrix (Hungarian method).
/// Returns col_of_row.
std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight);

struct StabilityEntry {
  ClusterMethod method = ClusterMethod::Nmf;
  std::size_t k = 0;
  std::vector<double> consistency;  // one per repetition
  std::vector<double> cosine;
  double consistency_mean = 0.0;
  double consistency_std = 0.0;
  double cosine_mean = 0.0;
  double cosine_std = 0.0;
};

struct StabilityReport {
  std::vector<StabilityEntry> entries;
  std::size_t repetitions = 0;
  std::uint64_t seed = 0;
};

struct StabilityOptions {
  std::size_t repetitions = 20;
  std::uint64_t seed = 0;
  ClusterMethod method = ClusterMethod::Nmf;
  ClusterOptions cluster;
  std::size_t workers = 0;
};

/// Per repetition: random split of the rows into three near-equal parts,
/// clustering on parts (1,3) and (2,3), label matching on part 3, and mean
/// cosine similarity of matched templates.
StabilityReport stability_analysis(const Matrix& s, const std::vector<std::size_t>& k_values,
                                   const StabilityOptions& opts);

}  // namespace cgm
