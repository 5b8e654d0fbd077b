#pragma once

#include <vector>

#include "sotc/tensor.hpp"

namespace sotc {

// Thin SVD, p = min(m, n). u: m x p with orthonormal columns, vt: p x n with
// orthonormal rows, sigma non-increasing and non-negative. Sign convention:
// the largest-magnitude entry of each left singular vector is non-negative
// (first such entry on ties).
struct SvdResult {
  Tensor u;
  std::vector<double> sigma;
  Tensor vt;

  Tensor reconstruct() const;                 // u * diag(sigma) * vt
  Tensor reconstruct_rank(int r) const;       // first r triplets only
};

// One-sided Jacobi on the taller orientation. Throws kConvergence if the
// off-diagonal mass has not dropped below 1e-12 * ||W||_F^2 after 60 sweeps.
SvdResult svd(const Tensor& w);

// Best rank-r approximation U_r S_r V_r^T. 1 <= r <= min(rows, cols).
Tensor rank_r_approx(const Tensor& w, int r);

}  // namespace sotc
