#include "sotc/optimizer.hpp"

#include <cmath>

namespace sotc {

void AdamW::update(const std::string& name, Tensor& param, const Tensor& grad) {
  if (!param.same_shape(grad))
    throw Error(Error::Kind::kShape, "AdamW::update: grad shape mismatch for " + name);

  Moments& st = state_[name];
  if (st.t == 0) {
    st.m = Tensor(param.rows, param.cols);
    st.v = Tensor(param.rows, param.cols);
  }
  ++st.t;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (size_t i = 0; i < param.size(); ++i) {
    st.m.data[i] = b1 * st.m.data[i] + (1.0 - b1) * grad.data[i];
    st.v.data[i] = b2 * st.v.data[i] + (1.0 - b2) * grad.data[i] * grad.data[i];
    double mhat = st.m.data[i] / bc1;
    double vhat = st.v.data[i] / bc2;
    param.data[i] -= hyper_.lr * (mhat / (std::sqrt(vhat) + hyper_.eps) +
                                  hyper_.weight_decay * param.data[i]);
  }
}

}  // namespace sotc
