#include "sotc/tape.hpp"

#include <cmath>
#include <utility>

namespace sotc {

Tape::NodeId Tape::push(Tensor value, std::function<void(Tape&, const Tensor&)> back) {
  nodes_.push_back(Node{std::move(value), {}, std::move(back)});
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::accum(NodeId id, const Tensor& g) {
  Tensor& slot = grads_[id];
  if (slot.data.empty()) {
    slot = g;
  } else {
    for (size_t i = 0; i < slot.size(); ++i) slot.data[i] += g.data[i];
  }
}

Tape::NodeId Tape::leaf(Tensor value, std::string param_name) {
  NodeId id = push(std::move(value), nullptr);
  nodes_[id].param_name = std::move(param_name);
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  Tensor out = sotc::matmul(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accum(a, sotc::matmul_nt(g, t.value(b)));
    t.accum(b, sotc::matmul_tn(t.value(a), g));
  });
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  Tensor out = sotc::matmul_nt(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accum(a, sotc::matmul(g, t.value(b)));
    t.accum(b, sotc::matmul_tn(g, t.value(a)));
  });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  Tensor out = sotc::add(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accum(a, g);
    t.accum(b, g);
  });
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  Tensor out = hadamard(value(a), value(b));
  return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accum(a, hadamard(g, t.value(b)));
    t.accum(b, hadamard(g, t.value(a)));
  });
}

Tape::NodeId Tape::scale(NodeId a, double s) {
  Tensor out = sotc::scale(value(a), s);
  return push(std::move(out), [a, s](Tape& t, const Tensor& g) {
    t.accum(a, sotc::scale(g, s));
  });
}

Tape::NodeId Tape::relu(NodeId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), [a](Tape& t, const Tensor& g) {
    Tensor ga = g;
    const Tensor& x = t.value(a);
    for (size_t i = 0; i < ga.size(); ++i)
      if (x.data[i] <= 0.0) ga.data[i] = 0.0;
    t.accum(a, ga);
  });
}

Tape::NodeId Tape::sum(NodeId a) {
  Tensor out(1, 1);
  for (double v : value(a).data) out.data[0] += v;
  return push(std::move(out), [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor ga(x.rows, x.cols);
    for (double& v : ga.data) v = g.data[0];
    t.accum(a, ga);
  });
}

Tape::NodeId Tape::frob_sq(NodeId a) {
  Tensor out(1, 1);
  for (double v : value(a).data) out.data[0] += v * v;
  return push(std::move(out), [a](Tape& t, const Tensor& g) {
    t.accum(a, sotc::scale(t.value(a), 2.0 * g.data[0]));
  });
}

Tape::NodeId Tape::add_row(NodeId a, NodeId row) {
  const Tensor& x = value(a);
  const Tensor& r = value(row);
  if (r.rows != 1 || r.cols != x.cols)
    throw Error(Error::Kind::kShape, "add_row: row must be 1x" + std::to_string(x.cols));
  Tensor out = x;
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out.at(i, j) += r.at(0, j);
  return push(std::move(out), [a, row](Tape& t, const Tensor& g) {
    t.accum(a, g);
    Tensor gr(1, g.cols);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) gr.at(0, j) += g.at(i, j);
    t.accum(row, gr);
  });
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& in = value(x);
  const Tensor& g_ = value(gain);
  const Tensor& b_ = value(bias);
  const int R = in.rows, C = in.cols;
  if (g_.rows != 1 || g_.cols != C || b_.rows != 1 || b_.cols != C)
    throw Error(Error::Kind::kShape, "layer_norm: gain/bias must be 1x" + std::to_string(C));
  constexpr double kEps = 1e-5;

  Tensor xhat(R, C), out(R, C);
  std::vector<double> inv_std(R);
  for (int i = 0; i < R; ++i) {
    double mu = 0.0;
    for (int j = 0; j < C; ++j) mu += in.at(i, j);
    mu /= C;
    double var = 0.0;
    for (int j = 0; j < C; ++j) {
      double d = in.at(i, j) - mu;
      var += d * d;
    }
    var /= C;
    inv_std[i] = 1.0 / std::sqrt(var + kEps);
    for (int j = 0; j < C; ++j) {
      xhat.at(i, j) = (in.at(i, j) - mu) * inv_std[i];
      out.at(i, j) = xhat.at(i, j) * g_.at(0, j) + b_.at(0, j);
    }
  }

  return push(std::move(out),
              [x, gain, bias, xhat, inv_std](Tape& t, const Tensor& g) {
    const Tensor& gv = t.value(gain);
    const int R = g.rows, C = g.cols;
    Tensor gx(R, C), ggain(1, C), gbias(1, C);
    for (int i = 0; i < R; ++i) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int j = 0; j < C; ++j) {
        double dxhat = g.at(i, j) * gv.at(0, j);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat.at(i, j);
        ggain.at(0, j) += g.at(i, j) * xhat.at(i, j);
        gbias.at(0, j) += g.at(i, j);
      }
      for (int j = 0; j < C; ++j) {
        double dxhat = g.at(i, j) * gv.at(0, j);
        gx.at(i, j) = inv_std[i] / C *
                      (C * dxhat - sum_dxhat - xhat.at(i, j) * sum_dxhat_xhat);
      }
    }
    t.accum(x, gx);
    t.accum(gain, ggain);
    t.accum(bias, gbias);
  });
}

Tape::NodeId Tape::causal_attention(NodeId q, NodeId k, NodeId v, int n_heads) {
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  const int L = Q.rows, D = Q.cols;
  if (!Q.same_shape(K) || !Q.same_shape(V))
    throw Error(Error::Kind::kShape, "causal_attention: q/k/v shapes differ");
  if (D % n_heads != 0)
    throw Error(Error::Kind::kShape, "causal_attention: dim not divisible by heads");
  const int dh = D / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h] is the LxL row-stochastic (lower-triangular) attention matrix.
  std::vector<Tensor> probs(n_heads, Tensor(L, L));
  Tensor out(L, D);
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * dh;
    Tensor& P = probs[h];
    for (int i = 0; i < L; ++i) {
      double mx = -1e300;
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        for (int d = 0; d < dh; ++d) s += Q.at(i, off + d) * K.at(j, off + d);
        s *= inv_sqrt;
        P.at(i, j) = s;
        if (s > mx) mx = s;
      }
      double z = 0.0;
      for (int j = 0; j <= i; ++j) {
        P.at(i, j) = std::exp(P.at(i, j) - mx);
        z += P.at(i, j);
      }
      for (int j = 0; j <= i; ++j) P.at(i, j) /= z;
      for (int d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (int j = 0; j <= i; ++j) acc += P.at(i, j) * V.at(j, off + d);
        out.at(i, off + d) = acc;
      }
    }
  }

  return push(std::move(out),
              [q, k, v, n_heads, dh, inv_sqrt, probs](Tape& t, const Tensor& g) {
    const Tensor& Q = t.value(q);
    const Tensor& K = t.value(k);
    const Tensor& V = t.value(v);
    const int L = Q.rows, D = Q.cols;
    Tensor gq(L, D), gk(L, D), gv(L, D);
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * dh;
      const Tensor& P = probs[h];
      // dV = P^T dO ; dP = dO V^T ; dS = P o (dP - rowsum(dP o P))
      for (int i = 0; i < L; ++i) {
        // dP row i restricted to j <= i
        std::vector<double> dp(i + 1);
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) {
          double s = 0.0;
          for (int d = 0; d < dh; ++d) s += g.at(i, off + d) * V.at(j, off + d);
          dp[j] = s;
          dot += s * P.at(i, j);
        }
        for (int j = 0; j <= i; ++j) {
          double ds = P.at(i, j) * (dp[j] - dot) * inv_sqrt;
          for (int d = 0; d < dh; ++d) {
            gq.at(i, off + d) += ds * K.at(j, off + d);
            gk.at(j, off + d) += ds * Q.at(i, off + d);
            gv.at(j, off + d) += P.at(i, j) * g.at(i, off + d);
          }
        }
      }
    }
    t.accum(q, gq);
    t.accum(k, gk);
    t.accum(v, gv);
  });
}

Tape::NodeId Tape::gather_rows(NodeId table, std::vector<int> idx) {
  const Tensor& tab = value(table);
  for (int i : idx)
    if (i < 0 || i >= tab.rows)
      throw Error(Error::Kind::kDomain, "gather_rows: index out of range");
  Tensor out(static_cast<int>(idx.size()), tab.cols);
  for (size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < tab.cols; ++j) out.at(static_cast<int>(r), j) = tab.at(idx[r], j);
  return push(std::move(out), [table, idx = std::move(idx)](Tape& t, const Tensor& g) {
    const Tensor& tab = t.value(table);
    Tensor gt(tab.rows, tab.cols);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < tab.cols; ++j) gt.at(idx[r], j) += g.at(static_cast<int>(r), j);
    t.accum(table, gt);
  });
}

Tape::NodeId Tape::mean_nll(NodeId logits, std::vector<int> targets) {
  const Tensor& lg = value(logits);
  if (static_cast<int>(targets.size()) != lg.rows)
    throw Error(Error::Kind::kShape, "mean_nll: one target per row required");
  const int R = lg.rows, C = lg.cols;
  for (int t : targets)
    if (t < 0 || t >= C) throw Error(Error::Kind::kDomain, "mean_nll: target out of range");

  // softmax probabilities kept for backward
  Tensor probs(R, C);
  double loss = 0.0;
  for (int i = 0; i < R; ++i) {
    double mx = lg.at(i, 0);
    for (int j = 1; j < C; ++j) mx = std::max(mx, lg.at(i, j));
    double z = 0.0;
    for (int j = 0; j < C; ++j) {
      probs.at(i, j) = std::exp(lg.at(i, j) - mx);
      z += probs.at(i, j);
    }
    for (int j = 0; j < C; ++j) probs.at(i, j) /= z;
    loss -= std::log(probs.at(i, targets[i]));
  }
  Tensor out(1, 1);
  out.data[0] = loss / R;

  return push(std::move(out),
              [logits, targets = std::move(targets), probs](Tape& t, const Tensor& g) {
    const int R = probs.rows, C = probs.cols;
    Tensor gl = sotc::scale(probs, g.data[0] / R);
    for (int i = 0; i < R; ++i) gl.at(i, targets[i]) -= g.data[0] / R;
    t.accum(logits, gl);
  });
}

double Tape::scalar(NodeId id) const {
  const Tensor& v = value(id);
  if (v.rows != 1 || v.cols != 1)
    throw Error(Error::Kind::kDomain, "scalar: node is not 1x1");
  return v.data[0];
}

std::map<std::string, Tensor> Tape::backward(NodeId loss) {
  const Tensor& lv = value(loss);
  if (lv.rows != 1 || lv.cols != 1)
    throw Error(Error::Kind::kDomain, "backward: loss must be a 1x1 scalar");

  grads_.assign(nodes_.size(), Tensor{});
  Tensor seed(1, 1);
  seed.data[0] = 1.0;
  grads_[loss] = seed;

  for (NodeId id = loss; id >= 0; --id) {
    if (grads_[id].data.empty() || !nodes_[id].back) continue;
    nodes_[id].back(*this, grads_[id]);
  }

  std::map<std::string, Tensor> table;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].param_name.empty()) continue;
    if (grads_[i].data.empty()) {
      table[nodes_[i].param_name] = Tensor(nodes_[i].value.rows, nodes_[i].value.cols);
    } else {
      table[nodes_[i].param_name] = grads_[i];
    }
  }
  grads_.clear();
  return table;
}

}  // namespace sotc
