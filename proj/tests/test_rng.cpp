#include <doctest.h>

#include <bit>
#include <cmath>
#include <set>
#include <vector>

#include "cgm/rng.hpp"

using cgm::Rng;

namespace {

// Reference xoshiro256++ step, written from the published algorithm.
struct Xoshiro {
  std::uint64_t s[4];
  std::uint64_t next() {
    const std::uint64_t result = std::rotl(s[0] + s[3], 23) + s[0];
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = std::rotl(s[3], 45);
    return result;
  }
};

std::uint64_t splitmix_ref(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

TEST_CASE("splitmix64 reference values") {
  std::uint64_t state = 0;
  CHECK(cgm::splitmix64(state) == 0xe220a8397b1dcdafULL);
  CHECK(cgm::splitmix64(state) == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("xoshiro256++ step from a known state") {
  Xoshiro x{{1, 2, 3, 4}};
  CHECK(x.next() == 41943041ULL);
}

TEST_CASE("generator equals the reference seeded through splitmix64") {
  for (std::uint64_t seed : {0ULL, 1ULL, 0xdeadbeefULL}) {
    std::uint64_t sm = seed;
    Xoshiro ref{};
    for (auto& v : ref.s) v = splitmix_ref(sm);
    Rng rng(seed);
    for (int i = 0; i < 100; ++i) CHECK(rng.next() == ref.next());
  }
}

TEST_CASE("streams are reproducible and distinct") {
  auto a = Rng::stream(7, "weights:fc", 0);
  auto b = Rng::stream(7, "weights:fc", 0);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());

  std::set<std::uint64_t> firsts;
  for (std::uint64_t idx = 0; idx < 50; ++idx) firsts.insert(Rng::stream(7, "pair", idx).next());
  firsts.insert(Rng::stream(8, "pair", 0).next());
  firsts.insert(Rng::stream(7, "other", 0).next());
  CHECK(firsts.size() == 52);
}

TEST_CASE("label hash is FNV-1a") {
  CHECK(cgm::hash_label("") == 0xcbf29ce484222325ULL);
  CHECK(cgm::hash_label("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("uniform draws stay in range with the right moments") {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sq / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12.0).epsilon(0.02));
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform_open0();
    REQUIRE(v > 0.0);
    REQUIRE(v <= 1.0);
    const double w = rng.uniform(-2.0, 3.0);
    REQUIRE(w >= -2.0);
    REQUIRE(w < 3.0);
  }
}

TEST_CASE("bounded integers are unbiased") {
  Rng rng(4);
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(6)];
  for (int c : counts) CHECK(c == doctest::Approx(n / 6.0).epsilon(0.05));
  CHECK(rng.below(1) == 0);
}

TEST_CASE("normal draws have zero mean and unit variance") {
  Rng rng(5);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
  Rng r2(5);
  CHECK(r2.normal(3.0, 0.0) == 3.0);
}
