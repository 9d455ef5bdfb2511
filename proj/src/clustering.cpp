#include "cgm/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cgm/errors.hpp"
#include "cgm/parallel.hpp"
#include "cgm/rng.hpp"

namespace cgm {

Matrix Matrix::from_stack(const EimStack& s) {
  Matrix m(s.rows(), s.pixels());
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = s.maps[i];
  return m;
}

Matrix Matrix::select_rows(const std::vector<std::size_t>& indices) const {
  Matrix m(indices.size(), cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = row(indices.at(r));
    std::copy(src.begin(), src.end(), m.row(r).begin());
  }
  return m;
}

double reconstruction_error(const Matrix& s, const Matrix& w, const Matrix& h) {
  double sum = 0.0;
  for (std::size_t i = 0; i < s.rows; ++i) {
    for (std::size_t j = 0; j < s.cols; ++j) {
      double v = 0.0;
      for (std::size_t t = 0; t < w.cols; ++t) v += w(i, t) * h(t, j);
      const double e = s(i, j) - v;
      sum += e * e;
    }
  }
  return std::sqrt(sum);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Tensor box_smooth(const Tensor& map, std::size_t window) {
  if (map.rank() != 2) throw DimensionError("box_smooth expects an [H,W] map, got " + shape_to_string(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (window < 1 || window % 2 == 0) throw ConfigError("smoothing window must be odd and >= 1");
  if (window > h || window > w)
    throw ConfigError("smoothing window " + std::to_string(window) + " exceeds map side " +
                      std::to_string(std::min(h, w)));
  const long long r = static_cast<long long>(window / 2);
  const double norm = 1.0 / static_cast<double>(window * window);
  Tensor out({h, w});
  for (long long y = 0; y < static_cast<long long>(h); ++y) {
    for (long long x = 0; x < static_cast<long long>(w); ++x) {
      double sum = 0.0;
      for (long long dy = -r; dy <= r; ++dy) {
        const auto yy = static_cast<std::size_t>(std::clamp(y + dy, 0LL, static_cast<long long>(h) - 1));
        for (long long dx = -r; dx <= r; ++dx) {
          const auto xx = static_cast<std::size_t>(std::clamp(x + dx, 0LL, static_cast<long long>(w) - 1));
          sum += map[yy * w + xx];
        }
      }
      out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = static_cast<float>(sum * norm);
    }
  }
  return out;
}

float nearest_rank_percentile(std::span<const float> values, double percentile) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  if (!(percentile > 0.0 && percentile < 100.0)) throw ConfigError("percentile must lie in (0, 100)");
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

EimStack preprocess_maps(const EimStack& stack, std::size_t window, double percentile) {
  if (!(percentile > 0.0 && percentile < 100.0)) throw ConfigError("percentile must lie in (0, 100)");
  EimStack out = stack;
  const std::size_t h = stack.height(), w = stack.width();
  for (std::size_t i = 0; i < stack.rows(); ++i) {
    auto row = stack.row(i);
    Tensor map({h, w}, std::vector<float>(row.begin(), row.end()));
    const Tensor smooth = box_smooth(map, window);
    const float cut = nearest_rank_percentile(smooth.data(), percentile);
    for (std::size_t p = 0; p < h * w; ++p) out.maps[i * h * w + p] = smooth[p] > cut ? 1.0f : 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// NMF
// ---------------------------------------------------------------------------

namespace {
constexpr double kDenomFloor = 1e-12;
}

NmfResult nmf(const Matrix& s, std::size_t k, const NmfOptions& opts) {
  const std::size_t n = s.rows, p = s.cols;
  if (k < 1 || k > std::min(n, p))
    throw ConfigError("NMF rank " + std::to_string(k) + " must lie in [1, min(n,p)=" + std::to_string(std::min(n, p)) +
                      "]");
  for (std::size_t i = 0; i < s.data.size(); ++i)
    if (s.data[i] < 0.0 || !std::isfinite(s.data[i]))
      throw ValidationError("NMF input has a negative or non-finite entry at row " + std::to_string(i / p) +
                            ", column " + std::to_string(i % p));

  Rng rng = Rng::stream(opts.seed, "nmf-init");
  NmfResult r;
  r.w = Matrix(n, k);
  r.h = Matrix(k, p);
  for (auto& v : r.w.data) v = rng.uniform_open0();
  for (auto& v : r.h.data) v = rng.uniform_open0();

  Matrix& w = r.w;
  Matrix& h = r.h;
  Matrix wts(k, p), wtw(k, k), sht(n, k), hht(k, k);
  double prev = reconstruction_error(s, w, h);
  r.error_history.push_back(prev);
  for (std::size_t it = 0; it < opts.iters; ++it) {
    // H <- H * (W^T S) / (W^T W H)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < p; ++j) {
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += w(i, a) * s(i, j);
        wts(a, j) = v;
      }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += w(i, a) * w(i, b);
        wtw(a, b) = v;
      }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t j = 0; j < p; ++j) {
        double denom = 0.0;
        for (std::size_t b = 0; b < k; ++b) denom += wtw(a, b) * h(b, j);
        h(a, j) *= wts(a, j) / std::max(denom, kDenomFloor);
      }
    // W <- W * (S H^T) / (W H H^T)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < k; ++a) {
        double v = 0.0;
        for (std::size_t j = 0; j < p; ++j) v += s(i, j) * h(a, j);
        sht(i, a) = v;
      }
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        double v = 0.0;
        for (std::size_t j = 0; j < p; ++j) v += h(a, j) * h(b, j);
        hht(a, b) = v;
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < k; ++a) {
        double denom = 0.0;
        for (std::size_t b = 0; b < k; ++b) denom += w(i, b) * hht(b, a);
        w(i, a) *= sht(i, a) / std::max(denom, kDenomFloor);
      }

    const double err = reconstruction_error(s, w, h);
    r.error_history.push_back(err);
    const double improvement = prev > 0.0 ? (prev - err) / prev : 0.0;
    prev = err;
    if (improvement < opts.tol) break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

std::size_t nearest(const Matrix& centroids, std::span<const double> x, double* dist) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows; ++c) {
    const double d = squared_distance(centroids.row(c), x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans(const Matrix& s, std::size_t k, const KMeansOptions& opts) {
  const std::size_t n = s.rows;
  if (k < 1 || k > n) throw ConfigError("k-means needs 1 <= K <= n (K=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  Rng rng = Rng::stream(opts.seed, "kmeans-init");
  KMeansResult r;
  r.centroids = Matrix(k, s.cols);

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t first = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (d2[i] > 0.0 && acc > target) {
            pick = i;
            break;
          }
        }
        if (pick == n)
          for (std::size_t i = n; i-- > 0;)
            if (d2[i] > 0.0) {
              pick = i;
              break;
            }
      } else {
        // All remaining points coincide with centers; take an unused one.
        std::vector<std::size_t> unused;
        for (std::size_t i = 0; i < n; ++i)
          if (!chosen[i]) unused.push_back(i);
        pick = unused[rng.below(unused.size())];
      }
    }
    chosen[pick] = true;
    auto src = s.row(pick);
    std::copy(src.begin(), src.end(), r.centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(s.row(i), r.centroids.row(c)));
  }

  r.labels.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (std::size_t it = 0; it < opts.iters; ++it) {
    bool changed = it == 0;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto label = nearest(r.centroids, s.row(i), &dist[i]);
      if (label != r.labels[i]) changed = true;
      r.labels[i] = label;
      inertia += dist[i];
    }
    r.inertia_history.push_back(inertia);
    if (!changed) break;

    Matrix sums(k, s.cols);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.labels[i]];
      auto dst = sums.row(r.labels[i]);
      auto src = s.row(i);
      for (std::size_t j = 0; j < s.cols; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < s.cols; ++j) r.centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = squared_distance(s.row(i), r.centroids.row(r.labels[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      auto src = s.row(far);
      std::copy(src.begin(), src.end(), r.centroids.row(c).begin());
      r.labels[far] = c;
    }
  }
  return r;
}

std::string_view method_name(ClusterMethod m) { return m == ClusterMethod::Nmf ? "nmf" : "kmeans"; }

ClusterMethod parse_method(std::string_view name) {
  if (name == "nmf") return ClusterMethod::Nmf;
  if (name == "kmeans") return ClusterMethod::KMeans;
  throw ConfigError("unknown clustering method '" + std::string(name) + "'");
}

ClusterModel fit_clusters(const Matrix& s, std::size_t k, ClusterMethod method, const ClusterOptions& opts) {
  ClusterModel m;
  m.method = method;
  m.k = k;
  if (method == ClusterMethod::Nmf) {
    auto r = nmf(s, k, opts.nmf);
    m.w = std::move(r.w);
    m.h = std::move(r.h);
  } else {
    auto r = kmeans(s, k, opts.kmeans);
    m.h = std::move(r.centroids);
    m.w = Matrix(s.rows, k);
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t c = 0; c < k; ++c) m.w(i, c) = -squared_distance(s.row(i), m.h.row(c));
  }
  m.assignments = assign_clusters(m);
  return m;
}

std::vector<std::size_t> assign_clusters(const ClusterModel& model) {
  std::vector<std::size_t> labels(model.w.rows, 0);
  for (std::size_t i = 0; i < model.w.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < model.w.cols; ++c)
      if (model.w(i, c) > model.w(i, best)) best = c;
    labels[i] = best;
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t n = weight.size();
  if (n == 0) return {};
  double top = 0.0;
  for (const auto& r : weight) {
    if (r.size() != n) throw DimensionError("assignment matrix must be square");
    for (double v : r) top = std::max(top, v);
  }
  // Min-cost Hungarian (potentials form), 1-indexed.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = (top - weight[i0 - 1][j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> col_of_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

LabelMatch match_labelings(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                           const std::vector<std::size_t>& overlap, std::size_t k) {
  if (k == 0) throw ValidationError("label matching needs K >= 1");
  std::vector<std::vector<double>> agree(k, std::vector<double>(k, 0.0));  // [label a][label b]
  for (auto i : overlap) {
    if (i >= a.size() || i >= b.size()) throw ValidationError("overlap index " + std::to_string(i) + " out of range");
    if (a[i] >= k || b[i] >= k)
      throw ValidationError("label outside [0, K) with K=" + std::to_string(k) + ": labelings use different K");
    agree[a[i]][b[i]] += 1.0;
  }

  LabelMatch m;
  m.permutation.resize(k);
  if (k <= 8) {
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1.0;
    do {
      double score = 0.0;
      for (std::size_t j = 0; j < k; ++j) score += agree[perm[j]][j];
      if (score > best) {
        best = score;
        m.permutation = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // Rows are b labels, columns a labels.
    std::vector<std::vector<double>> weight(k, std::vector<double>(k));
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < k; ++i) weight[j][i] = agree[i][j];
    m.permutation = max_weight_assignment(weight);
  }
  double matched = 0.0;
  for (std::size_t j = 0; j < k; ++j) matched += agree[m.permutation[j]][j];
  m.consistency = overlap.empty() ? 1.0 : matched / static_cast<double>(overlap.size());
  return m;
}

LabelMatch match_labelings(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t k) {
  if (a.size() != b.size()) throw ValidationError("labelings have different lengths");
  std::vector<std::size_t> all(a.size());
  std::iota(all.begin(), all.end(), 0);
  return match_labelings(a, b, all, k);
}

// ---------------------------------------------------------------------------
// Stability
// ---------------------------------------------------------------------------

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size() - 1))};
}

ClusterOptions with_seed(ClusterOptions opts, std::uint64_t seed) {
  opts.nmf.seed = seed;
  opts.kmeans.seed = seed;
  return opts;
}

}  // namespace

StabilityReport stability_analysis(const Matrix& s, const std::vector<std::size_t>& k_values,
                                   const StabilityOptions& opts) {
  if (k_values.empty()) throw ConfigError("stability analysis needs at least one K");
  if (opts.repetitions < 1) throw ConfigError("stability analysis needs at least one repetition");
  const std::size_t k_max = *std::max_element(k_values.begin(), k_values.end());
  if (s.rows < 3 * k_max)
    throw ValidationError("stability analysis needs at least 3*K_max=" + std::to_string(3 * k_max) +
                          " maps, got " + std::to_string(s.rows));
  for (auto k : k_values)
    if (k < 1) throw ConfigError("K must be >= 1");

  StabilityReport report;
  report.repetitions = opts.repetitions;
  report.seed = opts.seed;
  const std::size_t n = s.rows;
  const std::size_t part = n / 3;

  for (auto k : k_values) {
    StabilityEntry e;
    e.method = opts.method;
    e.k = k;
    e.consistency.assign(opts.repetitions, 0.0);
    e.cosine.assign(opts.repetitions, 0.0);
    parallel_for(opts.repetitions, opts.workers, [&](std::size_t rep) {
      Rng rng = Rng::stream(opts.seed, "stability-split", rep);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      const std::vector<std::size_t> p1(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(part));
      const std::vector<std::size_t> p2(order.begin() + static_cast<std::ptrdiff_t>(part),
                                        order.begin() + static_cast<std::ptrdiff_t>(2 * part));
      const std::vector<std::size_t> p3(order.begin() + static_cast<std::ptrdiff_t>(2 * part), order.end());

      std::vector<std::size_t> rows_a = p1, rows_b = p2;
      rows_a.insert(rows_a.end(), p3.begin(), p3.end());
      rows_b.insert(rows_b.end(), p3.begin(), p3.end());
      const std::uint64_t fit_seed = Rng::stream(opts.seed, "stability-fit", rep * 1009 + k).next();
      const auto model_a = fit_clusters(s.select_rows(rows_a), k, opts.method, with_seed(opts.cluster, fit_seed));
      const auto model_b = fit_clusters(s.select_rows(rows_b), k, opts.method, with_seed(opts.cluster, fit_seed + 1));

      // Shared maps sit at the tail of both row lists.
      std::vector<std::size_t> la, lb;
      for (std::size_t t = 0; t < p3.size(); ++t) {
        la.push_back(model_a.assignments[p1.size() + t]);
        lb.push_back(model_b.assignments[p2.size() + t]);
      }
      const auto match = match_labelings(la, lb, k);
      double cos = 0.0;
      for (std::size_t j = 0; j < k; ++j) cos += cosine_similarity(model_a.h.row(match.permutation[j]), model_b.h.row(j));
      e.consistency[rep] = match.consistency;
      e.cosine[rep] = cos / static_cast<double>(k);
    });
    std::tie(e.consistency_mean, e.consistency_std) = mean_std(e.consistency);
    std::tie(e.cosine_mean, e.cosine_std) = mean_std(e.cosine);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace cgm
