#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sotc/error.hpp"

namespace sotc {

// Dense row-major matrix of 64-bit floats. The only numeric carrier in the
// project; vectors are 1xN or Nx1 tensors.
struct Tensor {
  int rows{0};
  int cols{0};
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(checked_size(r, c), 0.0) {}

  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;

  static size_t checked_size(int r, int c) {
    if (r <= 0 || c <= 0) throw Error(Error::Kind::kShape, "tensor dims must be positive");
    return static_cast<size_t>(r) * c;
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor identity(int n);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);
};

Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);

double frob_norm(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

// Throws kDomain if any element is NaN/Inf; context names the producer.
void check_finite(const Tensor& a, const std::string& context);

inline double sigmoid(double x) {
  // saturates instead of overflowing for large |x|
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace sotc
