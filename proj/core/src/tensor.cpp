#include "sotc/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace sotc {

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows[0].empty())
    throw Error(Error::Kind::kShape, "from_rows: empty input");
  Tensor t(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < t.rows; ++i) {
    if (static_cast<int>(rows[i].size()) != t.cols)
      throw Error(Error::Kind::kShape, "from_rows: ragged input");
    std::copy(rows[i].begin(), rows[i].end(), t.data.begin() + static_cast<size_t>(i) * t.cols);
  }
  return t;
}

namespace {

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
          const Tensor& a, const Tensor& b, Tensor& c) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, 1.0,
              a.data.data(), a.cols, b.data.data(), b.cols, 0.0,
              c.data.data(), c.cols);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(Error::Kind::kShape,
              std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows) shape_error("matmul", a, b);
  Tensor c(a.rows, b.cols);
  gemm(CblasNoTrans, CblasNoTrans, a.rows, b.cols, a.cols, a, b, c);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols != b.cols) shape_error("matmul_nt", a, b);
  Tensor c(a.rows, b.rows);
  gemm(CblasNoTrans, CblasTrans, a.rows, b.rows, a.cols, a, b, c);
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows) shape_error("matmul_tn", a, b);
  Tensor c(a.cols, b.cols);
  gemm(CblasTrans, CblasNoTrans, a.cols, b.cols, a.rows, a, b, c);
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("add", a, b);
  Tensor c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("sub", a, b);
  Tensor c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c = a;
  for (double& v : c.data) v *= s;
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("hadamard", a, b);
  Tensor c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

double frob_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::fabs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error("max_abs_diff", a, b);
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(double)) == 0;
}

void check_finite(const Tensor& a, const std::string& context) {
  for (double v : a.data)
    if (!std::isfinite(v))
      throw Error(Error::Kind::kDomain, context + ": non-finite element");
}

}  // namespace sotc
