#include <cmath>
#include <vector>

#include "doctest.h"
#include "sotc/rng.hpp"
#include "sotc/tensor.hpp"

using namespace sotc;

namespace {

Tensor random_tensor(int r, int c, RngStream& rng) {
  Tensor t(r, c);
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

// independent triple-loop oracle
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul identity case") {
  RngStream rng(1, 0);
  Tensor a = random_tensor(3, 3, rng);
  Tensor out = matmul(Tensor::identity(3), a);
  CHECK(max_abs_diff(out, a) == 0.0);
}

TEST_CASE("matmul hand arithmetic") {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = Tensor::from_rows({{1}, {1}});
  Tensor c = matmul(a, b);
  CHECK(c.rows == 2);
  CHECK(c.cols == 1);
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  RngStream rng(2, 0);
  Tensor a = random_tensor(5, 7, rng);
  Tensor b = random_tensor(7, 2, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul shape mismatch rejected") {
  Tensor a(2, 3), b(4, 2);
  CHECK_THROWS_AS(matmul(a, b), Error);
}

TEST_CASE("matmul associativity") {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor(4, 6, rng);
    Tensor b = random_tensor(6, 5, rng);
    Tensor c = random_tensor(5, 3, rng);
    Tensor lhs = matmul(matmul(a, b), c);
    Tensor rhs = matmul(a, matmul(b, c));
    CHECK(frob_norm(sub(lhs, rhs)) <= 1e-9 * (1.0 + frob_norm(lhs)));
  }
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transpose") {
  RngStream rng(4, 0);
  Tensor a = random_tensor(4, 5, rng);
  Tensor b = random_tensor(3, 5, rng);
  CHECK(max_abs_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))) < 1e-12);
  Tensor c = random_tensor(5, 4, rng);
  Tensor d = random_tensor(5, 3, rng);
  CHECK(max_abs_diff(matmul_tn(c, d), naive_matmul(transpose(c), d)) < 1e-12);
}

TEST_CASE("elementwise helpers") {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  CHECK(add(a, b).at(1, 1) == 12.0);
  CHECK(sub(b, a).at(0, 0) == 4.0);
  CHECK(scale(a, 2.0).at(1, 0) == 6.0);
  CHECK(hadamard(a, b).at(0, 1) == 12.0);
  CHECK(frob_norm(a) == doctest::Approx(std::sqrt(30.0)));
  CHECK(max_abs(scale(a, -1.0)) == 4.0);
  CHECK_THROWS_AS(add(a, Tensor(3, 2)), Error);
}

TEST_CASE("bit_equal and check_finite") {
  Tensor a = Tensor::from_rows({{1, 2}});
  Tensor b = a;
  CHECK(bit_equal(a, b));
  b.at(0, 1) = std::nextafter(2.0, 3.0);
  CHECK(!bit_equal(a, b));
  Tensor bad(1, 2);
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(check_finite(bad, "test"), Error);
  CHECK_NOTHROW(check_finite(a, "test"));
}

TEST_CASE("tensor dims must be positive") {
  CHECK_THROWS_AS(Tensor(0, 3), Error);
  CHECK_THROWS_AS(Tensor(3, -1), Error);
}

TEST_CASE("sigmoid values") {
  CHECK(sigmoid(0.0) == 0.5);
  // high-precision reference value for sigmoid(2)
  CHECK(sigmoid(2.0) == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  RngStream rng(5, 0);
  for (int i = 0; i < 20; ++i) {
    double x = rng.uniform(-10.0, 10.0);
    CHECK(sigmoid(x) == doctest::Approx(1.0 - sigmoid(-x)).epsilon(1e-12));
  }
  // saturates instead of overflowing
  CHECK(sigmoid(700.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-700.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(sigmoid(700.0)));
  CHECK(std::isfinite(sigmoid(-700.0)));
}
