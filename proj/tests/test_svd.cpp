#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "sotc/rng.hpp"
#include "sotc/svd.hpp"
#include "sotc/tensor.hpp"

using namespace sotc;

namespace {

Tensor random_tensor(int r, int c, RngStream& rng) {
  Tensor t(r, c);
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Independent symmetric eigensolver (cyclic Jacobi rotations) used as the
// oracle: eigenvalues of W^T W must equal sigma^2.
std::vector<double> sym_eigenvalues(Tensor a) {
  REQUIRE(a.rows == a.cols);
  const int n = a.rows;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a.at(p, q)) < 1e-300) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * a.at(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a.at(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

void check_svd_valid(const Tensor& w) {
  SvdResult r = svd(w);
  const int p = std::min(w.rows, w.cols);
  REQUIRE(static_cast<int>(r.sigma.size()) == p);
  for (int i = 0; i + 1 < p; ++i) CHECK(r.sigma[i] >= r.sigma[i + 1]);
  for (double s : r.sigma) CHECK(s >= 0.0);
  CHECK(max_abs_diff(r.reconstruct(), w) < 1e-9 * (1.0 + frob_norm(w)));
  Tensor gu = matmul_tn(r.u, r.u);
  Tensor gv = matmul_nt(r.vt, r.vt);
  CHECK(max_abs_diff(gu, Tensor::identity(p)) < 1e-9);
  CHECK(max_abs_diff(gv, Tensor::identity(p)) < 1e-9);
}

}  // namespace

TEST_CASE("svd of diagonal matrix") {
  Tensor d = Tensor::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  SvdResult r = svd(d);
  REQUIRE(r.sigma.size() == 3);
  CHECK(r.sigma[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.sigma[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.sigma[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd of zero matrix") {
  Tensor z(4, 3);
  SvdResult r = svd(z);
  for (double s : r.sigma) CHECK(s == 0.0);
  CHECK(max_abs_diff(r.reconstruct(), z) < 1e-12);
}

TEST_CASE("sigma^2 equals eigenvalues of W^T W (oracle)") {
  RngStream rng(6, 0);
  Tensor w = random_tensor(6, 4, rng);
  SvdResult r = svd(w);
  std::vector<double> ev = sym_eigenvalues(matmul_tn(w, w));
  REQUIRE(ev.size() == r.sigma.size());
  for (size_t i = 0; i < ev.size(); ++i) {
    double s2 = r.sigma[i] * r.sigma[i];
    CHECK(s2 == doctest::Approx(ev[i]).epsilon(1e-8));
  }
}

TEST_CASE("svd validity over shape classes") {
  RngStream rng(7, 0);
  for (int trial = 0; trial < 100; ++trial) {
    check_svd_valid(random_tensor(4, 4, rng));
    check_svd_valid(random_tensor(6, 4, rng));
    check_svd_valid(random_tensor(4, 6, rng));
  }
  // one big square case
  check_svd_valid(random_tensor(64, 64, rng));
}

TEST_CASE("svd sign convention") {
  RngStream rng(8, 0);
  Tensor w = random_tensor(5, 5, rng);
  SvdResult r = svd(w);
  for (int j = 0; j < 5; ++j) {
    double best = 0.0;
    int best_i = 0;
    for (int i = 0; i < 5; ++i) {
      if (std::abs(r.u.at(i, j)) > std::abs(best)) {
        best = r.u.at(i, j);
        best_i = i;
      }
    }
    (void)best_i;
    CHECK(best >= 0.0);
  }
}

TEST_CASE("svd rejects non-finite input") {
  Tensor w(2, 2);
  w.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(svd(w), Error);
}

TEST_CASE("rank_r_approx analytic truncation") {
  Tensor d = Tensor::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  Tensor t = rank_r_approx(d, 2);
  Tensor expect = Tensor::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 0}});
  CHECK(max_abs_diff(t, expect) < 1e-10);
  CHECK(frob_norm(sub(d, t)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rank_r_approx full rank is identity") {
  RngStream rng(9, 0);
  Tensor w = random_tensor(5, 7, rng);
  CHECK(max_abs_diff(rank_r_approx(w, 5), w) < 1e-9);
}

TEST_CASE("rank_r_approx error formula and monotonicity") {
  RngStream rng(10, 0);
  Tensor w = random_tensor(6, 6, rng);
  SvdResult r = svd(w);
  double prev_err = 1e300;
  for (int rr = 1; rr <= 6; ++rr) {
    double err = frob_norm(sub(w, rank_r_approx(w, rr)));
    double tail = 0.0;
    for (int i = rr; i < 6; ++i) tail += r.sigma[i] * r.sigma[i];
    CHECK(err == doctest::Approx(std::sqrt(tail)).epsilon(1e-9).scale(1.0));
    CHECK(err <= prev_err + 1e-12);
    prev_err = err;
  }
}

TEST_CASE("rank_r_approx beats random rank-2 candidates") {
  RngStream rng(11, 0);
  Tensor w = random_tensor(6, 6, rng);
  double best = frob_norm(sub(w, rank_r_approx(w, 2)));
  // randomized lower-bounding: products of random 6x2, 2x6 factors with a
  // least-squares refit of the right factor against W
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor a = random_tensor(6, 2, rng);
    // refit b = argmin ||a b - w||_F  =>  b = (a^T a)^{-1} a^T w (2x2 solve)
    Tensor ata = matmul_tn(a, a);
    Tensor atw = matmul_tn(a, w);
    double det = ata.at(0, 0) * ata.at(1, 1) - ata.at(0, 1) * ata.at(1, 0);
    REQUIRE(std::abs(det) > 1e-12);
    Tensor b(2, 6);
    for (int j = 0; j < 6; ++j) {
      b.at(0, j) = (ata.at(1, 1) * atw.at(0, j) - ata.at(0, 1) * atw.at(1, j)) / det;
      b.at(1, j) = (-ata.at(1, 0) * atw.at(0, j) + ata.at(0, 0) * atw.at(1, j)) / det;
    }
    double err = frob_norm(sub(w, matmul(a, b)));
    CHECK(best <= err + 1e-9);
  }
}

TEST_CASE("rank_r_approx rejects bad r") {
  Tensor w(4, 3);
  CHECK_THROWS_AS(rank_r_approx(w, 0), Error);
  CHECK_THROWS_AS(rank_r_approx(w, 4), Error);
}

TEST_CASE("reconstruct_rank keeps leading triplets only") {
  RngStream rng(12, 0);
  Tensor w = random_tensor(5, 4, rng);
  SvdResult r = svd(w);
  CHECK(max_abs_diff(r.reconstruct_rank(4), r.reconstruct()) < 1e-12);
  // rank-1 reconstruction error equals tail formula
  double tail = 0.0;
  for (int i = 1; i < 4; ++i) tail += r.sigma[i] * r.sigma[i];
  CHECK(frob_norm(sub(w, r.reconstruct_rank(1))) ==
        doctest::Approx(std::sqrt(tail)).epsilon(1e-9));
}
