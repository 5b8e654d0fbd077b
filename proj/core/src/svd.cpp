#include "sotc/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sotc {

Tensor SvdResult::reconstruct() const { return reconstruct_rank(static_cast<int>(sigma.size())); }

Tensor SvdResult::reconstruct_rank(int r) const {
  Tensor us(u.rows, r);
  for (int i = 0; i < u.rows; ++i)
    for (int j = 0; j < r; ++j) us.at(i, j) = u.at(i, j) * sigma[j];
  Tensor vr(r, vt.cols);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < vt.cols; ++j) vr.at(i, j) = vt.at(i, j);
  return matmul(us, vr);
}

namespace {

constexpr int kMaxSweeps = 60;
constexpr double kOffDiagRel = 1e-12;

double col_dot(const Tensor& a, int p, int q) {
  double s = 0.0;
  for (int i = 0; i < a.rows; ++i) s += a.at(i, p) * a.at(i, q);
  return s;
}

void rotate_cols(Tensor& a, int p, int q, double c, double s) {
  for (int i = 0; i < a.rows; ++i) {
    double ap = a.at(i, p), aq = a.at(i, q);
    a.at(i, p) = c * ap - s * aq;
    a.at(i, q) = s * ap + c * aq;
  }
}

// SVD of a tall-or-square matrix (rows >= cols).
SvdResult svd_tall(const Tensor& w) {
  const int m = w.rows, n = w.cols;
  Tensor a = w;
  Tensor v = Tensor::identity(n);
  const double fro = frob_norm(w);
  const double thresh = kOffDiagRel * fro;

  bool converged = (fro == 0.0);
  double worst = 0.0;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    worst = 0.0;
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = col_dot(a, p, q);
        if (apq == 0.0) continue;
        double app = col_dot(a, p, p);
        double aqq = col_dot(a, q, q);
        // normalized criterion keeps small singular directions orthogonal;
        // the absolute floor covers numerically-zero columns
        double rel = std::fabs(apq) / std::max(std::sqrt(app * aqq), 1e-300);
        if (rel <= kOffDiagRel || std::fabs(apq) <= thresh * 1e-6) continue;
        worst = std::max(worst, std::fabs(apq));
        rotated = true;
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        rotate_cols(a, p, q, c, s);
        rotate_cols(v, p, q, c, s);
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    std::ostringstream os;
    os << "svd: no convergence after " << kMaxSweeps << " sweeps, residual " << worst;
    throw Error(Error::Kind::kConvergence, os.str());
  }

  std::vector<double> sigma(n);
  Tensor u(m, n);
  std::vector<int> degenerate;
  const double tiny = 1e-300;
  for (int j = 0; j < n; ++j) {
    double norm = 0.0;
    for (int i = 0; i < m; ++i) norm += a.at(i, j) * a.at(i, j);
    norm = std::sqrt(norm);
    sigma[j] = norm;
    if (norm > tiny) {
      for (int i = 0; i < m; ++i) u.at(i, j) = a.at(i, j) / norm;
    } else {
      sigma[j] = 0.0;
      degenerate.push_back(j);
    }
  }

  // Complete u with orthonormal columns for zero singular values.
  for (int j : degenerate) {
    for (int e = 0; e < m; ++e) {
      std::vector<double> cand(m, 0.0);
      cand[e] = 1.0;
      for (int k = 0; k < n; ++k) {
        if (k == j || (sigma[k] == 0.0 && k > j)) continue;
        double d = 0.0;
        for (int i = 0; i < m; ++i) d += cand[i] * u.at(i, k);
        for (int i = 0; i < m; ++i) cand[i] -= d * u.at(i, k);
      }
      double norm = std::sqrt(std::inner_product(cand.begin(), cand.end(), cand.begin(), 0.0));
      if (norm > 0.5) {
        for (int i = 0; i < m; ++i) u.at(i, j) = cand[i] / norm;
        break;
      }
    }
  }

  // Sort by sigma descending, stable in column order.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return sigma[x] > sigma[y]; });

  SvdResult r;
  r.sigma.resize(n);
  r.u = Tensor(m, n);
  r.vt = Tensor(n, n);
  for (int j = 0; j < n; ++j) {
    int src = order[j];
    r.sigma[j] = sigma[src];
    for (int i = 0; i < m; ++i) r.u.at(i, j) = u.at(i, src);
    for (int i = 0; i < n; ++i) r.vt.at(j, i) = v.at(i, src);
  }
  return r;
}

void apply_sign_convention(SvdResult& r) {
  const int m = r.u.rows, p = r.u.cols;
  for (int j = 0; j < p; ++j) {
    int arg = 0;
    double best = -1.0;
    for (int i = 0; i < m; ++i) {
      double a = std::fabs(r.u.at(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (r.u.at(arg, j) < 0.0) {
      for (int i = 0; i < m; ++i) r.u.at(i, j) = -r.u.at(i, j);
      for (int i = 0; i < r.vt.cols; ++i) r.vt.at(j, i) = -r.vt.at(j, i);
    }
  }
}

}  // namespace

SvdResult svd(const Tensor& w) {
  check_finite(w, "svd input");
  SvdResult r;
  if (w.rows >= w.cols) {
    r = svd_tall(w);
  } else {
    // W = U S V^T  <=>  W^T = V S U^T
    SvdResult t = svd_tall(transpose(w));
    r.sigma = t.sigma;
    r.u = transpose(t.vt);
    r.vt = transpose(t.u);
  }
  apply_sign_convention(r);
  return r;
}

Tensor rank_r_approx(const Tensor& w, int r) {
  const int p = std::min(w.rows, w.cols);
  if (r < 1 || r > p) {
    std::ostringstream os;
    os << "rank_r_approx: r=" << r << " out of range [1," << p << "]";
    throw Error(Error::Kind::kDomain, os.str());
  }
  return svd(w).reconstruct_rank(r);
}

}  // namespace sotc
