#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cgm/clustering.hpp"
#include "cgm/errors.hpp"
#include "cgm/factories.hpp"
#include "cgm/rng.hpp"

using namespace cgm;

namespace {

Matrix random_nonnegative(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, p);
  for (auto& v : m.data) v = rng.uniform();
  return m;
}

EimStack stack_of(std::size_t rows, std::size_t h, std::size_t w, std::vector<float> values) {
  EimStack s;
  s.layer = "test";
  s.maps = Tensor({rows, h, w}, std::move(values));
  return s;
}

// Rows drawn around `groups` well-separated binary templates.
Matrix grouped_rows(std::size_t groups, std::size_t per_group, std::size_t p, std::uint64_t seed,
                    std::vector<std::size_t>* truth = nullptr) {
  Rng rng(seed);
  Matrix m(groups * per_group, p);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t r = 0; r < per_group; ++r) {
      const std::size_t i = g * per_group + r;
      for (std::size_t j = 0; j < p; ++j) {
        const bool on = j * groups / p == g;
        m(i, j) = (on ? 1.0 : 0.0) + 0.05 * rng.uniform();
      }
      if (truth) truth->push_back(g);
    }
  return m;
}

// Oracle for matching: best agreement over all relabelings, by brute force.
double brute_force_consistency(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t k) {
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == perm[b[i]] ? 1 : 0;
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("nearest-rank percentile") {
  const std::vector<float> v{4, 1, 3, 2};
  CHECK(nearest_rank_percentile(v, 75) == 3.0f);
  CHECK(nearest_rank_percentile(v, 50) == 2.0f);
  CHECK(nearest_rank_percentile(v, 1) == 1.0f);
  CHECK(nearest_rank_percentile(v, 99.9) == 4.0f);
  // Oracle: the ceil(p/100 * n)-th order statistic.
  Rng rng(1);
  std::vector<float> big(37);
  for (auto& x : big) x = static_cast<float>(rng.uniform());
  auto sorted = big;
  std::sort(sorted.begin(), sorted.end());
  for (double pct : {10.0, 25.0, 33.3, 75.0, 90.0})
    CHECK(nearest_rank_percentile(big, pct) == sorted[static_cast<std::size_t>(std::ceil(pct / 100.0 * 37)) - 1]);
  CHECK_THROWS_AS(nearest_rank_percentile(v, 0), ConfigError);
  CHECK_THROWS_AS(nearest_rank_percentile(v, 100), ConfigError);
}

TEST_CASE("box smoothing replicates edges") {
  const Tensor m({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto s = box_smooth(m, 3);
  CHECK(s[4] == doctest::Approx(5.0));
  // Top-left window with replication: rows {1,1,2},{1,1,2},{4,4,5}.
  CHECK(s[0] == doctest::Approx((1 + 1 + 2 + 1 + 1 + 2 + 4 + 4 + 5) / 9.0));
  CHECK(bit_equal(box_smooth(m, 1), m));
  CHECK_THROWS_AS(box_smooth(m, 2), ConfigError);
  CHECK_THROWS_AS(box_smooth(m, 5), ConfigError);
}

TEST_CASE("preprocessing examples") {
  const auto row = preprocess_maps(stack_of(1, 1, 4, {1, 2, 3, 4}), 1, 75);
  CHECK(row.maps.values() == std::vector<float>{0, 0, 0, 1});

  const auto flat = preprocess_maps(stack_of(1, 4, 4, std::vector<float>(16, 0.3f)), 3, 75);
  for (float v : flat.maps.data()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(preprocess_maps(stack_of(1, 2, 2, {1, 2, 3, 4}), 3, 75), ConfigError);
}

TEST_CASE("preprocessed maps are binary with at most a quarter set") {
  Rng rng(2);
  std::vector<float> vals(5 * 8 * 8);
  for (auto& v : vals) v = static_cast<float>(rng.uniform());
  const auto out = preprocess_maps(stack_of(5, 8, 8, vals), 3, 75);
  for (std::size_t r = 0; r < 5; ++r) {
    std::size_t ones = 0;
    for (float v : out.row(r)) {
      CHECK((v == 0.0f || v == 1.0f));
      ones += v == 1.0f ? 1 : 0;
    }
    CHECK(ones <= 16);
  }
}

TEST_CASE("bright quadrant binarizes to that quadrant") {
  std::vector<float> v(16 * 16, 0.0f);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 8; x < 16; ++x) v[y * 16 + x] = 1.0f + 0.01f * static_cast<float>(x + y);
  const auto out = preprocess_maps(stack_of(1, 16, 16, v), 3, 75);
  std::size_t inter = 0, uni = 0;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const bool truth = y < 8 && x >= 8, got = out.maps[y * 16 + x] == 1.0f;
      inter += truth && got;
      uni += truth || got;
    }
  CHECK(static_cast<double>(inter) / static_cast<double>(uni) >= 0.8);
}

TEST_CASE("NMF error never increases") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = random_nonnegative(20, 50, seed);
    NmfOptions o;
    o.seed = seed;
    o.tol = 0.0;
    o.iters = 200;
    const auto r = nmf(s, 3, o);
    REQUIRE(r.error_history.size() == 201);
    for (std::size_t i = 1; i < r.error_history.size(); ++i)
      CHECK(r.error_history[i] <= r.error_history[i - 1] * (1.0 + 1e-12));
    for (double v : r.w.data) CHECK(v >= 0.0);
    for (double v : r.h.data) CHECK(v >= 0.0);
    CHECK(r.error_history.back() == doctest::Approx(reconstruction_error(s, r.w, r.h)));
  }
}

TEST_CASE("NMF recovers an exact rank-1 matrix") {
  Rng rng(4);
  std::vector<double> w(12), h(30);
  for (auto& v : w) v = 0.1 + rng.uniform();
  for (auto& v : h) v = rng.uniform();
  Matrix s(12, 30);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 30; ++j) s(i, j) = w[i] * h[j];
  const auto r = nmf(s, 1);
  double norm = 0.0;
  for (double v : s.data) norm += v * v;
  CHECK(reconstruction_error(s, r.w, r.h) / std::sqrt(norm) <= 1e-3);
  CHECK(cosine_similarity(r.h.row(0), h) >= 0.999);
}

TEST_CASE("NMF at full rank fits at least as well as at lower rank") {
  const auto s = random_nonnegative(6, 10, 9);
  double prev = std::numeric_limits<double>::infinity();
  NmfOptions o;
  o.iters = 2000;
  o.tol = 1e-9;
  for (std::size_t k = 1; k <= 6; ++k) {
    const auto r = nmf(s, k, o);
    CHECK(r.error_history.back() <= prev + 1e-6);
    prev = r.error_history.back();
  }
}

TEST_CASE("NMF input validation") {
  Matrix s(3, 4, 1.0);
  CHECK_THROWS_AS(nmf(s, 4), ConfigError);
  CHECK_THROWS_AS(nmf(s, 0), ConfigError);
  s(1, 2) = -0.5;
  CHECK_THROWS_AS(nmf(s, 2), ValidationError);
}

TEST_CASE("NMF and k-means are deterministic given the seed") {
  const auto s = random_nonnegative(15, 20, 3);
  NmfOptions o;
  o.seed = 7;
  CHECK(nmf(s, 3, o).w.data == nmf(s, 3, o).w.data);
  KMeansOptions ko;
  ko.seed = 7;
  CHECK(kmeans(s, 3, ko).labels == kmeans(s, 3, ko).labels);
}

TEST_CASE("k-means separates distant clouds") {
  std::vector<std::size_t> truth;
  const auto s = grouped_rows(2, 10, 8, 1, &truth);
  const auto r = kmeans(s, 2);
  CHECK(match_labelings(truth, r.labels, 2).consistency == 1.0);
  for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
    CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-12);
}

TEST_CASE("k-means with one cluster per point has zero inertia") {
  const auto s = random_nonnegative(7, 3, 5);
  const auto r = kmeans(s, 7);
  CHECK(r.inertia_history.back() == 0.0);
  std::vector<std::size_t> sorted = r.labels;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::unique(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("k-means handles duplicate points and bad K") {
  Matrix s(4, 2, 1.0);
  const auto r = kmeans(s, 3);
  CHECK(r.labels.size() == 4);
  CHECK_THROWS_AS(kmeans(s, 5), ConfigError);
}

TEST_CASE("inertia never increases on random data") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = random_nonnegative(60, 5, seed + 10);
    KMeansOptions o;
    o.seed = seed;
    const auto r = kmeans(s, 4, o);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
  }
}

TEST_CASE("assignment takes the row maximum with ties to the lowest index") {
  ClusterModel m;
  m.w = Matrix(3, 3);
  m.w.data = {0.1, 0.9, 0.0, 0.5, 0.5, 0.0, 0.0, 0.2, 0.3};
  CHECK(assign_clusters(m) == std::vector<std::size_t>{1, 0, 2});

  // Scaling a row by a positive constant leaves its argmax unchanged.
  Rng rng(3);
  m.w = Matrix(20, 4);
  for (auto& v : m.w.data) v = rng.uniform();
  const auto before = assign_clusters(m);
  for (std::size_t i = 0; i < 20; ++i)
    for (auto& v : m.w.row(i)) v *= 0.01 + 10.0 * static_cast<double>(i);
  CHECK(assign_clusters(m) == before);
}

TEST_CASE("fitted models recover separated groups with both methods") {
  std::vector<std::size_t> truth;
  const auto s = grouped_rows(3, 8, 30, 2, &truth);
  for (auto method : {ClusterMethod::Nmf, ClusterMethod::KMeans}) {
    const auto m = fit_clusters(s, 3, method);
    CHECK(m.k == 3);
    CHECK(m.h.rows == 3);
    CHECK(m.assignments == assign_clusters(m));
    CHECK(match_labelings(truth, m.assignments, 3).consistency == 1.0);
  }
  CHECK(parse_method("kmeans") == ClusterMethod::KMeans);
  CHECK(method_name(ClusterMethod::Nmf) == "nmf");
  CHECK_THROWS_AS(parse_method("spectral"), ConfigError);
}

TEST_CASE("label matching") {
  const std::vector<std::size_t> a{0, 0, 1, 1, 2, 2, 2};
  const auto same = match_labelings(a, a, 3);
  CHECK(same.consistency == 1.0);
  CHECK(same.permutation == std::vector<std::size_t>{0, 1, 2});

  std::vector<std::size_t> perm{2, 0, 1};
  std::vector<std::size_t> b;
  for (auto l : a) b.push_back(perm[l]);
  const auto m = match_labelings(a, b, 3);
  CHECK(m.consistency == 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(m.permutation[b[i]] == a[i]);

  const auto partial = match_labelings(a, {0, 0, 1, 1, 2, 2, 0}, {0, 1, 2, 3}, 3);
  CHECK(partial.consistency == 1.0);

  CHECK_THROWS_AS(match_labelings(a, {0, 3, 1, 1, 2, 2, 2}, 3), ValidationError);
  CHECK_THROWS_AS(match_labelings(a, {0, 1}, 3), ValidationError);
}

TEST_CASE("matching agrees with brute force and is relabeling invariant") {
  Rng rng(5);
  for (std::size_t k : {2u, 3u, 5u}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::size_t> a(40), b(40);
      for (auto& v : a) v = rng.below(k);
      for (std::size_t i = 0; i < 40; ++i) b[i] = rng.uniform() < 0.6 ? a[i] : rng.below(k);
      const double c = match_labelings(a, b, k).consistency;
      CHECK(c == doctest::Approx(brute_force_consistency(a, b, k)));

      std::vector<std::size_t> pa(k), pb(k);
      std::iota(pa.begin(), pa.end(), 0);
      std::iota(pb.begin(), pb.end(), 0);
      std::shuffle(pa.begin(), pa.end(), rng);
      std::shuffle(pb.begin(), pb.end(), rng);
      std::vector<std::size_t> ra, rb;
      for (auto v : a) ra.push_back(pa[v]);
      for (auto v : b) rb.push_back(pb[v]);
      CHECK(match_labelings(ra, rb, k).consistency == doctest::Approx(c));
    }
  }
}

TEST_CASE("Hungarian path agrees with exhaustive search") {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = 9;
    std::vector<std::size_t> a(200), b(200);
    for (auto& v : a) v = rng.below(k);
    for (std::size_t i = 0; i < 200; ++i) b[i] = rng.uniform() < 0.5 ? (a[i] + 4) % k : rng.below(k);
    // k > 8 uses the Hungarian method; compare with the optimum over all 9! relabelings.
    CHECK(match_labelings(a, b, k).consistency == doctest::Approx(brute_force_consistency(a, b, k)));
  }
  const auto col = max_weight_assignment({{1, 5, 0}, {4, 0, 0}, {0, 0, 3}});
  CHECK(col == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("random labelings agree at the chance level") {
  // Monte-Carlo oracle with an unrelated generator and brute-force matching.
  std::mt19937_64 gen(99);
  std::uniform_int_distribution<std::size_t> lab(0, 2);
  double oracle = 0.0, ours = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<std::size_t> a(300), b(300);
    for (auto& v : a) v = lab(gen);
    for (auto& v : b) v = lab(gen);
    oracle += brute_force_consistency(a, b, 3);
    ours += match_labelings(a, b, 3).consistency;
  }
  CHECK(ours == doctest::Approx(oracle));
  CHECK(std::fabs(ours / 200 - 0.39) <= 0.04);
}

TEST_CASE("stability on perfectly separated groups") {
  const auto s = grouped_rows(3, 12, 30, 8);
  StabilityOptions o;
  o.repetitions = 6;
  o.seed = 1;
  o.workers = 2;
  const auto rep = stability_analysis(s, {3}, o);
  REQUIRE(rep.entries.size() == 1);
  const auto& e = rep.entries[0];
  CHECK(e.consistency_mean == 1.0);
  CHECK(e.consistency_std == 0.0);
  CHECK(e.cosine_mean >= 0.99);
  CHECK(e.consistency.size() == 6);

  o.method = ClusterMethod::KMeans;
  CHECK(stability_analysis(s, {3}, o).entries[0].consistency_mean == 1.0);
}

TEST_CASE("stability reports are reproducible and worker independent") {
  const auto s = random_nonnegative(30, 16, 4);
  StabilityOptions o;
  o.repetitions = 1;
  o.seed = 3;
  const auto a = stability_analysis(s, {2, 3}, o);
  const auto b = stability_analysis(s, {2, 3}, o);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.entries[i].consistency == b.entries[i].consistency);
    CHECK(a.entries[i].cosine == b.entries[i].cosine);
    CHECK(a.entries[i].consistency_std == 0.0);
  }
  o.repetitions = 4;
  o.workers = 1;
  const auto c = stability_analysis(s, {3}, o);
  o.workers = 4;
  const auto d = stability_analysis(s, {3}, o);
  CHECK(c.entries[0].consistency == d.entries[0].consistency);
  CHECK(c.entries[0].cosine == d.entries[0].cosine);
}

TEST_CASE("stability input validation") {
  const auto s = random_nonnegative(8, 5, 1);
  StabilityOptions o;
  CHECK_THROWS_AS(stability_analysis(s, {3}, o), ValidationError);
  CHECK_THROWS_AS(stability_analysis(s, {}, o), ConfigError);
  o.repetitions = 0;
  CHECK_THROWS_AS(stability_analysis(s, {2}, o), ConfigError);
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1, 0, 1}, b{2, 0, 2}, c{0, 1, 0}, z{0, 0, 0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, c) == 0.0);
  CHECK(cosine_similarity(a, z) == 0.0);
}
