#include <doctest.h>

#include <cmath>
#include <limits>

#include "cgm/errors.hpp"
#include "cgm/tensor.hpp"

using cgm::Shape;
using cgm::Tensor;

TEST_CASE("shape helpers") {
  CHECK(cgm::shape_numel({2, 3, 4}) == 24);
  CHECK(cgm::shape_numel({}) == 1);
  CHECK(cgm::shape_to_string({1, 3, 8, 8}) == "[1,3,8,8]");
}

TEST_CASE("construction and element access") {
  Tensor t({1, 2, 2, 3}, 0.5f);
  CHECK(t.size() == 12);
  CHECK(t.rank() == 4);
  t.at(0, 1, 1, 2) = 7.0f;
  CHECK(t[11] == 7.0f);
  CHECK(t.at(0, 0, 0, 0) == 0.5f);

  auto v = Tensor::from_list({1.0f, 2.0f, 3.0f});
  CHECK(v.shape() == Shape{3});
  CHECK(v[2] == 3.0f);

  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), cgm::DimensionError);
}

TEST_CASE("reshape keeps data and checks the element count") {
  Tensor t({2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
  auto r = t.reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r.values() == t.values());
  CHECK_THROWS_AS(t.reshaped({4, 2}), cgm::DimensionError);
}

TEST_CASE("bit equality distinguishes signed zero and NaN payloads") {
  Tensor a({2}, std::vector<float>{0.0f, 1.0f});
  Tensor b({2}, std::vector<float>{-0.0f, 1.0f});
  CHECK(a == b);  // value equality
  CHECK_FALSE(cgm::bit_equal(a, b));
  CHECK(cgm::bit_equal(a, a));

  const float nan = std::numeric_limits<float>::quiet_NaN();
  Tensor n({1}, std::vector<float>{nan});
  CHECK(cgm::bit_equal(n, n));
  CHECK_FALSE(n.all_finite());
  CHECK(a.all_finite());

  CHECK_FALSE(cgm::bit_equal(Tensor({2}), Tensor({1, 2})));
}

TEST_CASE("max_abs_diff") {
  Tensor a({3}, std::vector<float>{1, 2, 3});
  Tensor b({3}, std::vector<float>{1, 2.5f, 2});
  CHECK(cgm::max_abs_diff(a, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cgm::max_abs_diff(a, Tensor({2})), cgm::DimensionError);
}
