#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "sotc/tensor.hpp"

namespace sotc {

// Decoupled-weight-decay Adam. State is keyed by parameter name so the
// trainable subset can change between calls without invalidating moments.
class AdamW {
 public:
  struct Hyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  explicit AdamW(Hyper hyper) : hyper_(hyper) {}

  void set_lr(double lr) { hyper_.lr = lr; }
  double lr() const { return hyper_.lr; }

  void update(const std::string& name, Tensor& param, const Tensor& grad);

 private:
  struct Moments {
    Tensor m, v;
    int64_t t = 0;
  };
  Hyper hyper_;
  std::map<std::string, Moments> state_;
};

}  // namespace sotc
